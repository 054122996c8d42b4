// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace defectforge {

enum class ErrorKind {
  // dataset-core
  MissingImageFile,
  DanglingReference,
  MalformedSegmentation,
  DuplicateId,
  EmptyResult,
  InsufficientImages,
  NoImagesAtResolution,
  TooFewInstances,
  // patch-extraction
  EmptyMaskAfterResize,
  // prompt-builder
  EmptyPromptCandidates,
  // mask-synthesis
  PlacementFailed,
  // generation
  BackendUnavailable,
  ProtocolMismatch,
  ResolutionMismatch,
  DefectiveBackground,
  // filter-ranker
  TooFewReferences,
  TargetExceedsPool,
  // compositor
  CropOutOfBounds,
  WriteFailure,
  // mixture-composer
  InsufficientSyntheticPool,
  // cli
  ConfigError,
  StageInputMissing,
  StaleInput,
  // generic
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingImageFile: return "MissingImageFile";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::MalformedSegmentation: return "MalformedSegmentation";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::InsufficientImages: return "InsufficientImages";
    case ErrorKind::NoImagesAtResolution: return "NoImagesAtResolution";
    case ErrorKind::TooFewInstances: return "TooFewInstances";
    case ErrorKind::EmptyMaskAfterResize: return "EmptyMaskAfterResize";
    case ErrorKind::EmptyPromptCandidates: return "EmptyPromptCandidates";
    case ErrorKind::PlacementFailed: return "PlacementFailed";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::ProtocolMismatch: return "ProtocolMismatch";
    case ErrorKind::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorKind::DefectiveBackground: return "DefectiveBackground";
    case ErrorKind::TooFewReferences: return "TooFewReferences";
    case ErrorKind::TargetExceedsPool: return "TargetExceedsPool";
    case ErrorKind::CropOutOfBounds: return "CropOutOfBounds";
    case ErrorKind::WriteFailure: return "WriteFailure";
    case ErrorKind::InsufficientSyntheticPool: return "InsufficientSyntheticPool";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::StageInputMissing: return "StageInputMissing";
    case ErrorKind::StaleInput: return "StaleInput";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a stable error class. `subject` names the offending
/// id, path or stage when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string subject = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        subject_(std::move(subject)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorKind kind_;
  std::string subject_;
};

/// Process exit code for an error class: 2 config, 3 stage input, 4 backend.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidArgument:
      return 2;
    case ErrorKind::StageInputMissing:
    case ErrorKind::StaleInput:
      return 3;
    case ErrorKind::BackendUnavailable:
    case ErrorKind::ProtocolMismatch:
      return 4;
    default:
      return 1;
  }
}

}  // namespace defectforge

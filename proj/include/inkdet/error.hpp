/* Copyright (c) 2026 The inkdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <stdexcept>
#include <string>

namespace inkdet {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// InkML parsing.
struct MalformedXml : Error { using Error::Error; };
struct BadTrace : Error { using Error::Error; };
struct DanglingRef : Error { using Error::Error; };
struct EmptyGraphic : Error { using Error::Error; };
struct BadFraction : Error { using Error::Error; };

// Rasterization and image I/O.
struct NegativeCoordinate : Error { using Error::Error; };
struct UnknownLabel : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct BadHeader : Error { using Error::Error; };
struct BadCount : Error { using Error::Error; };

// Box geometry.
struct DegenerateAnchor : Error { using Error::Error; };
struct DegenerateBox : Error { using Error::Error; };

// Tensor engine.
struct ShapeMismatch : Error { using Error::Error; };
struct BadTarget : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };

// Checkpoints.
struct BadCheckpoint : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct DuplicateTensorName : Error { using Error::Error; };

// Evaluation and CLI.
struct UnknownClass : Error { using Error::Error; };
struct MissingData : Error { using Error::Error; };
struct BadConfig : Error { using Error::Error; };

}  // namespace inkdet

// Copyright (c) the cwic authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cwic/error.hpp"

namespace cwic {

const char* ToString(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic:
      return "bad magic";
    case FormatErrorKind::kUnsupportedVersion:
      return "unsupported version";
    case FormatErrorKind::kTruncated:
      return "truncated data";
    case FormatErrorKind::kBadHeader:
      return "invalid header";
    case FormatErrorKind::kModelMismatch:
      return "model mismatch";
    case FormatErrorKind::kBitCountMismatch:
      return "bit-count mismatch";
    case FormatErrorKind::kTrailingData:
      return "trailing data";
  }
  return "format error";
}

}  // namespace cwic

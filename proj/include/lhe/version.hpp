// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace lhe {
inline constexpr const char* kVersion = "0.1.0";
}

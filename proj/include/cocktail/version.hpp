#pragma once

namespace cocktail {

inline constexpr const char* kVersion = "0.1.0";

// Version of every JSON schema this tool emits (weight vectors, loss
// reports, provenance sidecars, lab reports).
inline constexpr int kFormatVersion = 1;

}  // namespace cocktail

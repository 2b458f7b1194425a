#pragma once

#include <array>
#include <string>
#include <string_view>

namespace scalar::data {

// The five control-condition types. Edge plays the role of Canny.
enum class Modality { Edge = 0, Depth = 1, Normal = 2, Hed = 3, Sketch = 4 };

inline constexpr std::array<Modality, 5> kAllModalities{Modality::Edge, Modality::Depth, Modality::Normal,
                                                        Modality::Hed, Modality::Sketch};

std::string_view modality_name(Modality m);
// Accepts the canonical names plus "canny" as an alias for edge.
Modality parse_modality(std::string_view name);

}  // namespace scalar::data

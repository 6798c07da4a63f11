#pragma once

#include <string>
#include <utility>
#include <vector>

#include "analysis/analysis.hpp"

namespace hgd {

// Deterministic SVG renderers: fixed canvas, fixed formatting, no
// timestamps, so identical inputs give byte-identical files.

// One line per profile over the shared tap axis.
std::string render_profile_plot(const std::vector<PerturbationProfile>& profiles,
                                const std::string& title);

// One heatmap panel per scatter, with the fitted line drawn over it.
std::string render_scatter_plot(
    const std::vector<std::pair<std::string, NoiseScatter>>& panels,
    const std::string& title);

// Write-to-temp-then-rename so readers never observe partial files.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace hgd

#ifndef DST_PLOTS_HPP
#define DST_PLOTS_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace dst {

// Renders three plain-text SVG charts from a metrics CSV:
//   density_bars.svg   - final per-layer density (linear scale)
//   active_params.svg  - final per-layer active weights (log scale)
//   accuracy.svg       - test accuracy per epoch
// `layer_sizes` supplies the per-layer weight counts needed to turn
// densities into parameter counts; it must match the CSV's layer columns.
// Returns the written file paths.
std::vector<std::string> emit_plots(const std::string& csv_path, const std::string& out_dir,
                                    const std::vector<std::size_t>& layer_sizes);

} // namespace dst

#endif // DST_PLOTS_HPP

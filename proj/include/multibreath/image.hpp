#pragma once

#include <string>
#include <vector>

#include "multibreath/metrics.hpp"

namespace mb::image {

// binary PPM (P6) plot artifacts; no UI, just files

void write_confusion_heatmap(const std::string& path,
                             const metrics::ConfusionMatrix4& cm,
                             int cell_px = 64);

void write_loss_curve(const std::string& path,
                      const std::vector<double>& losses, int width = 640,
                      int height = 360);

}  // namespace mb::image

#include "multibreath/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "multibreath/errors.hpp"

namespace mb::image {

namespace {

struct Pixmap {
  int w, h;
  std::vector<unsigned char> rgb;
  Pixmap(int w_, int h_) : w(w_), h(h_), rgb(3 * w_ * h_, 255) {}
  void put(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    unsigned char* p = &rgb[3 * (y * w + x)];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
  }
};

}  // namespace

void write_confusion_heatmap(const std::string& path,
                             const metrics::ConfusionMatrix4& cm,
                             int cell_px) {
  long mx = 1;
  for (const auto& row : cm.counts)
    for (long c : row) mx = std::max(mx, c);
  Pixmap img(4 * cell_px, 4 * cell_px);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 4; ++p) {
      const double frac = static_cast<double>(cm.counts[t][p]) / mx;
      const auto v = static_cast<unsigned char>(255.0 * (1.0 - frac));
      for (int y = 0; y < cell_px; ++y)
        for (int x = 0; x < cell_px; ++x)
          img.put(p * cell_px + x, t * cell_px + y, v, v, 255);
    }
  img.save(path);
}

void write_loss_curve(const std::string& path,
                      const std::vector<double>& losses, int width,
                      int height) {
  Pixmap img(width, height);
  if (losses.empty()) {
    img.save(path);
    return;
  }
  double lo = losses[0], hi = losses[0];
  for (double l : losses) {
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  if (hi - lo < 1e-12) hi = lo + 1e-12;
  const int margin = 8;
  auto ypix = [&](double v) {
    return margin + static_cast<int>((height - 2 * margin) * (hi - v) / (hi - lo));
  };
  auto xpix = [&](std::size_t i) {
    return losses.size() == 1
               ? width / 2
               : margin + static_cast<int>((width - 2.0 * margin) * i /
                                           (losses.size() - 1));
  };
  for (std::size_t i = 1; i < losses.size(); ++i) {
    const int x0 = xpix(i - 1), y0 = ypix(losses[i - 1]);
    const int x1 = xpix(i), y1 = ypix(losses[i]);
    const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const int x = x0 + (x1 - x0) * s / steps;
      const int y = y0 + (y1 - y0) * s / steps;
      img.put(x, y, 180, 30, 30);
      img.put(x, y + 1, 180, 30, 30);
    }
  }
  img.save(path);
}

}  // namespace mb::image

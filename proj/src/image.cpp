#include "sslseg/image.hpp"

#include "sslseg/errors.hpp"

namespace sslseg {

TensorPtr image_batch_to_tensor(std::span<const ImageF> images) {
  if (images.empty())
    throw dimension_error("image_batch_to_tensor: empty batch");
  const int H = images[0].height, W = images[0].width;
  const int N = static_cast<int>(images.size());
  auto t = make_tensor({N, 3, H, W});
  for (int n = 0; n < N; ++n) {
    const ImageF& img = images[static_cast<std::size_t>(n)];
    if (img.height != H || img.width != W)
      throw dimension_error("image_batch_to_tensor: mixed image sizes");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          t->values[static_cast<std::size_t>(t->offset4(n, c, y, x))] =
              img.at(y, x, c);
  }
  return t;
}

std::vector<std::uint8_t> label_batch_to_plane(
    std::span<const LabelMap> labels) {
  if (labels.empty())
    throw dimension_error("label_batch_to_plane: empty batch");
  const int H = labels[0].height, W = labels[0].width;
  std::vector<std::uint8_t> plane;
  plane.reserve(labels.size() * static_cast<std::size_t>(H) * W);
  for (const LabelMap& l : labels) {
    if (l.height != H || l.width != W)
      throw dimension_error("label_batch_to_plane: mixed label sizes");
    plane.insert(plane.end(), l.data.begin(), l.data.end());
  }
  return plane;
}

LabelMap argmax_to_label(const std::vector<double>& chw, int classes, int h,
                         int w) {
  const long plane = static_cast<long>(h) * w;
  if (static_cast<long>(chw.size()) != plane * classes)
    throw dimension_error("argmax_to_label: buffer does not hold " +
                          std::to_string(classes) + " planes");
  LabelMap out(h, w);
  for (long i = 0; i < plane; ++i) {
    int best = 0;
    double bv = chw[static_cast<std::size_t>(i)];
    for (int c = 1; c < classes; ++c) {
      const double v = chw[static_cast<std::size_t>(c * plane + i)];
      if (v > bv) {  // strict: ties keep the lowest class index
        bv = v;
        best = c;
      }
    }
    out.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace sslseg

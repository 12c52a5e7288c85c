#include "sslseg/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sslseg/augment.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/ops.hpp"

namespace fs = std::filesystem;

namespace sslseg {

namespace {

void validate_tta(const TtaOptions& opts) {
  if (opts.scales.empty())
    throw config_error("tta: at least one scale is required");
  for (double s : opts.scales)
    if (!(s > 0.0) || s > 8.0)
      throw config_error("tta: scales must lie in (0, 8]");
}

int snap4(int size, double scale) {
  const long target = std::lround(static_cast<double>(size) * scale / 4.0);
  return static_cast<int>(std::max(1L, target)) * 4;
}

// Mirrors the last axis of an [N,C,H,W] tensor in place.
void mirror_x(Tensor& t) {
  const int w = t.dim(3);
  const long planes = t.numel() / w;
  for (long p = 0; p < planes; ++p) {
    double* row = t.values.data() + p * w;
    std::reverse(row, row + w);
  }
}

// Probabilities for one same-sized group of mean-subtracted images.
void tta_group(MicroSegNet& net, const std::vector<const ImageF*>& group,
               const TtaOptions& opts,
               std::vector<std::vector<double>>& out) {
  const int h = group.front()->height, w = group.front()->width;
  const int classes = net.config.classes;
  const int n = static_cast<int>(group.size());
  const long plane = static_cast<long>(h) * w;

  std::vector<std::vector<double>> acc(
      group.size(),
      std::vector<double>(static_cast<std::size_t>(classes) * plane, 0.0));

  TensorPtr base = make_tensor({n, 3, h, w});
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          base->values[static_cast<std::size_t>(base->offset4(i, c, y, x))] =
              group[static_cast<std::size_t>(i)]->at(y, x, c);

  Tape silent;
  silent.set_recording(false);
  int views = 0;
  for (double scale : opts.scales)
    for (int flipped = 0; flipped < (opts.flip ? 2 : 1); ++flipped) {
      ++views;
      TensorPtr in = resize_bilinear(silent, base, snap4(h, scale),
                                     snap4(w, scale));
      if (flipped) mirror_x(*in);
      TensorPtr probs = softmax_channel(silent, forward_eval(net, in));
      if (flipped) mirror_x(*probs);
      TensorPtr back = resize_bilinear(silent, probs, h, w);
      for (int i = 0; i < n; ++i) {
        const double* src =
            back->values.data() + back->offset4(i, 0, 0, 0);
        double* dst = acc[static_cast<std::size_t>(i)].data();
        for (long j = 0; j < classes * plane; ++j) dst[j] += src[j];
      }
    }
  const double inv = 1.0 / views;
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        std::move(acc[static_cast<std::size_t>(i)]);
    for (double& v : out[static_cast<std::size_t>(i)]) v *= inv;
  }
}

}  // namespace

std::vector<std::vector<double>> tta_probabilities_batch(
    MicroSegNet& net, const std::vector<ImageF>& images,
    const std::array<double, 3>& means, const TtaOptions& opts) {
  validate_tta(opts);
  std::vector<ImageF> prepared(images);
  for (ImageF& img : prepared) {
    if (img.height % 4 != 0 || img.width % 4 != 0)
      throw dimension_error("tta: image sides must be divisible by 4");
    subtract_means(img, means);
  }
  std::vector<std::vector<double>> out(images.size());

  // Chunks of consecutive same-sized images share the batched forwards.
  constexpr std::size_t kChunk = 8;
  std::size_t start = 0;
  while (start < prepared.size()) {
    std::vector<const ImageF*> group{&prepared[start]};
    std::size_t end = start + 1;
    while (end < prepared.size() && group.size() < kChunk &&
           prepared[end].height == prepared[start].height &&
           prepared[end].width == prepared[start].width) {
      group.push_back(&prepared[end]);
      ++end;
    }
    std::vector<std::vector<double>> chunk_out(group.size());
    tta_group(net, group, opts, chunk_out);
    for (std::size_t i = 0; i < group.size(); ++i)
      out[start + i] = std::move(chunk_out[i]);
    start = end;
  }
  return out;
}

std::vector<double> tta_probabilities(MicroSegNet& net, const ImageF& image,
                                      const std::array<double, 3>& means,
                                      const TtaOptions& opts) {
  return tta_probabilities_batch(net, {image}, means, opts).front();
}

SemiDatasetResult generate_semi_dataset(MicroSegNet& net,
                                        const std::vector<Sample>& samples,
                                        const std::array<double, 3>& means,
                                        const std::string& out_dir,
                                        const TtaOptions& opts) {
  validate_tta(opts);
  fs::create_directories(fs::path(out_dir) / "pseudo_labels");

  SemiDatasetResult result;
  result.samples = samples;
  std::vector<std::size_t> todo;
  std::vector<ImageF> images;
  for (std::size_t i = 0; i < result.samples.size(); ++i) {
    Sample& s = result.samples[i];
    if (s.split != Split::TrainUnlabeled || !s.label_path.empty()) continue;
    try {
      ImageF img = read_image(s.image_path);
      if (img.height % 4 != 0 || img.width % 4 != 0)
        throw dimension_error("image sides must be divisible by 4");
      images.push_back(std::move(img));
      todo.push_back(i);
    } catch (const error& e) {
      result.failures.emplace_back(s.id, e.what());
    }
  }

  const std::vector<std::vector<double>> probs =
      tta_probabilities_batch(net, images, means, opts);
  for (std::size_t k = 0; k < todo.size(); ++k) {
    Sample& s = result.samples[todo[k]];
    LabelMap lab = argmax_to_label(probs[k], net.config.classes,
                                   images[k].height, images[k].width);
    const std::string path =
        (fs::path(out_dir) / "pseudo_labels" / (s.id + ".pgm")).string();
    write_label(path, lab);
    s.label_path = path;
    s.provenance = Provenance::Pseudo;
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(),
                 result.samples);
  return result;
}

}  // namespace sslseg

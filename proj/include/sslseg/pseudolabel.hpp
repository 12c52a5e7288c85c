#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sslseg/datahub.hpp"
#include "sslseg/image.hpp"
#include "sslseg/model.hpp"

namespace sslseg {

struct TtaOptions {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.5, 1.75};
  bool flip = true;  // also average the mirrored view at every scale
};

// Test-time-augmented class probabilities for one image: per scale (and
// mirror when enabled) the mean-subtracted input is resized with its sides
// snapped to multiples of 4, run through the network in inference mode,
// softmaxed, resized back and averaged. Returns [classes,H,W] row-major
// probabilities that sum to 1 at every pixel.
std::vector<double> tta_probabilities(MicroSegNet& net, const ImageF& image,
                                      const std::array<double, 3>& means,
                                      const TtaOptions& opts = {});

// Same computation for many images, batched per scale for throughput. The
// result matches the single-image path bitwise; images may differ in size.
std::vector<std::vector<double>> tta_probabilities_batch(
    MicroSegNet& net, const std::vector<ImageF>& images,
    const std::array<double, 3>& means, const TtaOptions& opts = {});

struct SemiDatasetResult {
  std::vector<Sample> samples;
  // (sample id, reason) for unlabeled rows whose image failed to process;
  // those rows stay unlabeled in samples.
  std::vector<std::pair<std::string, std::string>> failures;
};

// Assigns hardened (argmax, ties toward the lower class) test-time-augmented
// predictions to every unlabeled row, writing one label file per image under
// out_dir/pseudo_labels and a manifest.tsv covering all rows. Labeled and
// validation rows pass through untouched. A failing image is reported and
// skipped rather than aborting the batch. Reruns write identical bytes.
SemiDatasetResult generate_semi_dataset(MicroSegNet& net,
                                        const std::vector<Sample>& samples,
                                        const std::array<double, 3>& means,
                                        const std::string& out_dir,
                                        const TtaOptions& opts = {});

}  // namespace sslseg

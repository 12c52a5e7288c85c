#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sslseg/image.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

enum class Provenance { None, GroundTruth, Pseudo };
enum class Split { TrainLabeled, TrainUnlabeled, Val };

const char* provenance_name(Provenance p);
const char* split_name(Split s);

// One dataset row. Paths are stored resolved (usable as-is); manifest files
// on disk hold paths relative to the manifest directory where possible.
struct Sample {
  std::string id;
  std::string image_path;
  std::string label_path;  // empty for unlabeled rows
  Provenance provenance = Provenance::None;
  Split split = Split::TrainLabeled;
};

// --- 8-bit binary image files --------------------------------------------

// P6, maxval 255. Values are clamped to [0, 1] and rounded to bytes on
// write; reads return exact multiples of 1/255.
ImageF read_image(const std::string& path);
void write_image(const std::string& path, const ImageF& img);

// P5, maxval 255, pixel values are class indices (255 = ignore). When
// num_classes > 0, any other value >= num_classes raises domain_error.
LabelMap read_label(const std::string& path, int num_classes = 0);
void write_label(const std::string& path, const LabelMap& lab);

// --- manifests and means --------------------------------------------------

// Tab-separated rows: id, image path, label path or "-", provenance
// (gt|pseudo|none), split (train-labeled|train-unlabeled|val). Lines that
// are blank or start with # are skipped. In strict mode every referenced
// file must exist.
std::vector<Sample> read_manifest(const std::string& path, bool strict = true);
void write_manifest(const std::string& path,
                    const std::vector<Sample>& samples);

// Three decimal lines, one mean per RGB channel.
std::array<double, 3> read_means(const std::string& path);
void write_means(const std::string& path, const std::array<double, 3>& means);

// --- synthetic scenes -----------------------------------------------------

struct SyntheticSpec {
  int image_size = 64;
  int classes = 4;          // class 0 is background
  int shapes_min = 2;
  int shapes_max = 5;
  double background_noise = 0.08;  // uniform amplitude added per channel
  double color_jitter = 0.15;      // per-scene offset of each class color
  std::uint64_t seed = 1;
};

// kind 0: ellipse, 1: rectangle (both rotated, half extents a and b around
// cx, cy), 2: triangle with explicit vertices.
struct ShapeSpec {
  int kind = 0;
  int cls = 1;
  std::array<double, 3> color{};
  double cx = 0, cy = 0, a = 0, b = 0, theta = 0;
  std::array<double, 2> v0{}, v1{}, v2{};
};

struct Scene {
  std::vector<ShapeSpec> shapes;  // painter order, later shapes on top
  double bg_level = 0.45;
};

// The flat color a class renders with before per-scene jitter.
std::array<double, 3> class_base_color(int cls);

Scene make_scene(const SyntheticSpec& spec, Rng& rng);

// Class of the topmost shape covering the point, 0 for background. x and y
// are continuous image coordinates (pixel (row, col) spans
// [row, row+1) x [col, col+1)).
int scene_class_at(const Scene& scene, double x, double y);

// Rasterizes at 4x4 subsamples per pixel: the label is the majority class
// (ties toward the lower class index), the color is the subsample average
// plus per-pixel background noise.
void render_scene(const Scene& scene, const SyntheticSpec& spec, Rng& rng,
                  ImageF& img, LabelMap& lab);

// Writes images/, labels/, manifest.tsv and means.txt (channel means over
// the train split; 0.5 per channel when there are no train images). Images
// are deterministic functions of (spec.seed, split, index). Returns the
// manifest rows with resolved paths.
std::vector<Sample> generate_dataset(const SyntheticSpec& spec, int n_train,
                                     int n_val, const std::string& out_dir);

// Uniform labeled subset of round(fraction * n) samples without
// replacement; the complement is returned as unlabeled rows whose label
// paths are withheld. Deterministic in the seed; sample order within each
// part follows the input order.
std::pair<std::vector<Sample>, std::vector<Sample>> split_labeled(
    const std::vector<Sample>& train, double fraction, std::uint64_t seed);

}  // namespace sslseg

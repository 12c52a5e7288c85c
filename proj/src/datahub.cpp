#include "sslseg/datahub.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "sslseg/errors.hpp"

namespace fs = std::filesystem;

namespace sslseg {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::None: return "none";
    case Provenance::GroundTruth: return "gt";
    case Provenance::Pseudo: return "pseudo";
  }
  return "none";
}

const char* split_name(Split s) {
  switch (s) {
    case Split::TrainLabeled: return "train-labeled";
    case Split::TrainUnlabeled: return "train-unlabeled";
    case Split::Val: return "val";
  }
  return "val";
}

// --- netpbm I/O -----------------------------------------------------------

namespace {

// Reads one whitespace-delimited token, skipping # comments to end of line.
std::string next_token(std::FILE* f, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = std::fgetc(f)) != EOF) {
    if (ch == '#') {
      while ((ch = std::fgetc(f)) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty())
    throw format_error(path + ": truncated header");
  return tok;
}

long parse_dim(const std::string& tok, const std::string& path) {
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw format_error(path + ": malformed header field '" + tok + "'");
  const long v = std::strtol(tok.c_str(), nullptr, 10);
  if (v < 1 || v > 1 << 20)
    throw format_error(path + ": unreasonable dimension " + tok);
  return v;
}

struct RawPnm {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

RawPnm read_pnm(const std::string& path, const char* magic, int channels) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw io_error("cannot open " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  char m[3] = {0, 0, 0};
  if (std::fread(m, 1, 2, f) != 2 || m[0] != magic[0] || m[1] != magic[1])
    throw format_error(path + ": expected magic " + magic + ", got '" +
                       std::string(m, 2) + "'");
  RawPnm out;
  out.width = static_cast<int>(parse_dim(next_token(f, path), path));
  out.height = static_cast<int>(parse_dim(next_token(f, path), path));
  const long maxval = parse_dim(next_token(f, path), path);
  if (maxval != 255)
    throw format_error(path + ": only maxval 255 is supported, got " +
                       std::to_string(maxval));
  out.channels = channels;
  const std::size_t n =
      static_cast<std::size_t>(out.width) * out.height * channels;
  out.bytes.resize(n);
  if (std::fread(out.bytes.data(), 1, n, f) != n)
    throw format_error(path + ": truncated pixel data");
  return out;
}

void write_pnm(const std::string& path, const char* magic, int w, int h,
               const std::vector<std::uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "%s\n%d %d\n255\n", magic, w, h);
  const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) ==
                  bytes.size();
  std::fclose(f);
  if (!ok) throw io_error("short write to " + path);
}

}  // namespace

ImageF read_image(const std::string& path) {
  RawPnm raw = read_pnm(path, "P6", 3);
  ImageF img(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i)
    img.data[i] = static_cast<double>(raw.bytes[i]) / 255.0;
  return img;
}

void write_image(const std::string& path, const ImageF& img) {
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.data[i]));
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_pnm(path, "P6", img.width, img.height, bytes);
}

LabelMap read_label(const std::string& path, int num_classes) {
  RawPnm raw = read_pnm(path, "P5", 1);
  LabelMap lab(raw.height, raw.width);
  lab.data = std::move(raw.bytes);
  if (num_classes > 0)
    for (std::uint8_t v : lab.data)
      if (v >= num_classes && v != 255)
        throw domain_error(path + ": label value " + std::to_string(v) +
                           " outside [0, " + std::to_string(num_classes) +
                           ") and not the ignore index");
  return lab;
}

void write_label(const std::string& path, const LabelMap& lab) {
  write_pnm(path, "P5", lab.width, lab.height, lab.data);
}

// --- manifests ------------------------------------------------------------

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path pp(p);
  return pp.is_absolute() ? pp.string() : (base / pp).lexically_normal()
                                              .string();
}

std::string relativize(const fs::path& base, const std::string& p) {
  const std::string prefix = base.lexically_normal().string();
  fs::path pp = fs::path(p).lexically_normal();
  const std::string s = pp.string();
  if (s.size() > prefix.size() + 1 && s.compare(0, prefix.size(), prefix) == 0
      && s[prefix.size()] == '/')
    return s.substr(prefix.size() + 1);
  return s;
}

}  // namespace

std::vector<Sample> read_manifest(const std::string& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<Sample> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw format_error(path + ":" + std::to_string(lineno) + ": expected 5" +
                         " tab-separated fields, got " +
                         std::to_string(fields.size()));
    Sample s;
    s.id = fields[0];
    s.image_path = resolve(base, fields[1]);
    if (fields[3] == "gt")
      s.provenance = Provenance::GroundTruth;
    else if (fields[3] == "pseudo")
      s.provenance = Provenance::Pseudo;
    else if (fields[3] == "none")
      s.provenance = Provenance::None;
    else
      throw format_error(path + ":" + std::to_string(lineno) +
                         ": unknown provenance '" + fields[3] + "'");
    if (fields[4] == "train-labeled")
      s.split = Split::TrainLabeled;
    else if (fields[4] == "train-unlabeled")
      s.split = Split::TrainUnlabeled;
    else if (fields[4] == "val")
      s.split = Split::Val;
    else
      throw format_error(path + ":" + std::to_string(lineno) +
                         ": unknown split '" + fields[4] + "'");
    if (fields[2] == "-") {
      if (s.provenance != Provenance::None)
        throw format_error(path + ":" + std::to_string(lineno) +
                           ": missing label path for provenance '" +
                           fields[3] + "'");
    } else {
      if (s.provenance == Provenance::None)
        throw format_error(path + ":" + std::to_string(lineno) +
                           ": label path given for provenance 'none'");
      s.label_path = resolve(base, fields[2]);
    }
    if (strict) {
      if (!fs::exists(s.image_path))
        throw io_error(path + ":" + std::to_string(lineno) +
                       ": missing image file " + s.image_path);
      if (!s.label_path.empty() && !fs::exists(s.label_path))
        throw io_error(path + ":" + std::to_string(lineno) +
                       ": missing label file " + s.label_path);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::string& path,
                    const std::vector<Sample>& samples) {
  const fs::path base = fs::path(path).parent_path();
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "# id\timage\tlabel\tprovenance\tsplit\n");
  for (const Sample& s : samples)
    std::fprintf(f, "%s\t%s\t%s\t%s\t%s\n", s.id.c_str(),
                 relativize(base, s.image_path).c_str(),
                 s.label_path.empty() ? "-"
                                      : relativize(base, s.label_path).c_str(),
                 provenance_name(s.provenance), split_name(s.split));
  std::fclose(f);
}

std::array<double, 3> read_means(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::array<double, 3> m{};
  for (int c = 0; c < 3; ++c)
    if (!(in >> m[static_cast<std::size_t>(c)]))
      throw format_error(path + ": expected three decimal lines");
  return m;
}

void write_means(const std::string& path, const std::array<double, 3>& means) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw io_error("cannot open " + path + " for writing");
  std::fprintf(f, "%.17g\n%.17g\n%.17g\n", means[0], means[1], means[2]);
  std::fclose(f);
}

// --- synthetic scenes -----------------------------------------------------

namespace {

std::array<double, 3> hsv_color(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = std::min(5, static_cast<int>(hh));
  const double f = hh - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool inside_shape(const ShapeSpec& sh, double x, double y) {
  switch (sh.kind) {
    case 0: {  // ellipse
      const double c = std::cos(-sh.theta), s = std::sin(-sh.theta);
      const double dx = x - sh.cx, dy = y - sh.cy;
      const double rx = dx * c - dy * s, ry = dx * s + dy * c;
      return (rx / sh.a) * (rx / sh.a) + (ry / sh.b) * (ry / sh.b) <= 1.0;
    }
    case 1: {  // rectangle
      const double c = std::cos(-sh.theta), s = std::sin(-sh.theta);
      const double dx = x - sh.cx, dy = y - sh.cy;
      const double rx = dx * c - dy * s, ry = dx * s + dy * c;
      return std::abs(rx) <= sh.a && std::abs(ry) <= sh.b;
    }
    default: {  // triangle, sign-consistency with the edges
      auto cross = [](double ax, double ay, double bx, double by, double px,
                      double py) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      };
      const double d0 =
          cross(sh.v0[0], sh.v0[1], sh.v1[0], sh.v1[1], x, y);
      const double d1 =
          cross(sh.v1[0], sh.v1[1], sh.v2[0], sh.v2[1], x, y);
      const double d2 =
          cross(sh.v2[0], sh.v2[1], sh.v0[0], sh.v0[1], x, y);
      const bool has_neg = d0 < 0 || d1 < 0 || d2 < 0;
      const bool has_pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(has_neg && has_pos);
    }
  }
}

}  // namespace

std::array<double, 3> class_base_color(int cls) {
  // Background is flat gray; foreground classes take well-separated hues.
  if (cls == 0) return {0.45, 0.45, 0.45};
  const double h = 0.13 + 0.61803398875 * (cls - 1);
  return hsv_color(h, 0.55, 0.85);
}

Scene make_scene(const SyntheticSpec& spec, Rng& rng) {
  if (spec.classes < 2)
    throw config_error("make_scene: need at least one foreground class");
  if (spec.shapes_min < 1 || spec.shapes_min > spec.shapes_max)
    throw config_error("make_scene: bad shape count range");
  const double S = spec.image_size;
  Scene scene;
  const int count = rng.uniform_int(spec.shapes_min, spec.shapes_max);
  for (int i = 0; i < count; ++i) {
    ShapeSpec sh;
    sh.cls = rng.uniform_int(1, spec.classes - 1);
    sh.kind = (sh.cls - 1) % 3;
    const auto base = class_base_color(sh.cls);
    for (int c = 0; c < 3; ++c)
      sh.color[static_cast<std::size_t>(c)] = std::min(
          0.98, std::max(0.02, base[static_cast<std::size_t>(c)] +
                                   rng.uniform(-spec.color_jitter,
                                               spec.color_jitter)));
    sh.cx = rng.uniform(0.15, 0.85) * S;
    sh.cy = rng.uniform(0.15, 0.85) * S;
    if (sh.kind == 2) {
      // Triangle around the center; angles are resampled while badly
      // separated so slivers stay rare.
      double ang[3];
      for (int attempt = 0; attempt < 8; ++attempt) {
        for (double& a : ang) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
        std::sort(ang, ang + 3);
        const double g0 = ang[1] - ang[0];
        const double g1 = ang[2] - ang[1];
        const double g2 = 2.0 * std::numbers::pi - ang[2] + ang[0];
        if (std::min({g0, g1, g2}) > 0.5) break;
      }
      std::array<std::array<double, 2>, 3> v;
      for (int k = 0; k < 3; ++k) {
        const double radius = rng.uniform(0.10, 0.24) * S;
        v[static_cast<std::size_t>(k)] = {sh.cx + radius * std::cos(ang[k]),
                                          sh.cy + radius * std::sin(ang[k])};
      }
      sh.v0 = v[0];
      sh.v1 = v[1];
      sh.v2 = v[2];
    } else {
      sh.a = rng.uniform(0.08, 0.24) * S;
      sh.b = rng.uniform(0.08, 0.24) * S;
      sh.theta = rng.uniform(0.0, std::numbers::pi);
    }
    scene.shapes.push_back(sh);
  }
  return scene;
}

int scene_class_at(const Scene& scene, double x, double y) {
  for (auto it = scene.shapes.rbegin(); it != scene.shapes.rend(); ++it)
    if (inside_shape(*it, x, y)) return it->cls;
  return 0;
}

void render_scene(const Scene& scene, const SyntheticSpec& spec, Rng& rng,
                  ImageF& img, LabelMap& lab) {
  const int S = spec.image_size;
  img = ImageF(S, S);
  lab = LabelMap(S, S);
  int votes[256];
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      std::memset(votes, 0, sizeof(votes));
      double rsum = 0, gsum = 0, bsum = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double px = x + (sx + 0.5) / 4.0;
          const double py = y + (sy + 0.5) / 4.0;
          const ShapeSpec* top = nullptr;
          for (auto it = scene.shapes.rbegin(); it != scene.shapes.rend();
               ++it)
            if (inside_shape(*it, px, py)) {
              top = &*it;
              break;
            }
          const int cls = top ? top->cls : 0;
          ++votes[cls];
          const std::array<double, 3> col =
              top ? top->color
                  : std::array<double, 3>{scene.bg_level, scene.bg_level,
                                          scene.bg_level};
          rsum += col[0];
          gsum += col[1];
          bsum += col[2];
        }
      int best = 0;
      for (int c = 1; c < 256; ++c)
        if (votes[c] > votes[best]) best = c;
      lab.at(y, x) = static_cast<std::uint8_t>(best);
      const double a = spec.background_noise;
      img.at(y, x, 0) = rsum / 16.0 + rng.uniform(-a, a);
      img.at(y, x, 1) = gsum / 16.0 + rng.uniform(-a, a);
      img.at(y, x, 2) = bsum / 16.0 + rng.uniform(-a, a);
    }
}

std::vector<Sample> generate_dataset(const SyntheticSpec& spec, int n_train,
                                     int n_val, const std::string& out_dir) {
  if (n_train < 0 || n_val < 0)
    throw config_error("generate_dataset: negative image counts");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");

  std::vector<Sample> samples;
  std::array<double, 3> mean_acc{0.0, 0.0, 0.0};
  long mean_pixels = 0;

  auto emit = [&](int split_tag, int index) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%06d",
                  split_tag == 0 ? "train" : "val", index);
    Rng rng = derive_rng(spec.seed, 0xDA7A,
                         static_cast<std::uint64_t>(split_tag),
                         static_cast<std::uint64_t>(index));
    Scene scene = make_scene(spec, rng);
    ImageF img;
    LabelMap lab;
    render_scene(scene, spec, rng, img, lab);
    const std::string image_path =
        (fs::path(out_dir) / "images" / (std::string(id) + ".ppm")).string();
    const std::string label_path =
        (fs::path(out_dir) / "labels" / (std::string(id) + ".pgm")).string();
    write_image(image_path, img);
    write_label(label_path, lab);
    if (split_tag == 0) {
      // Means come from the quantized bytes actually stored.
      ImageF stored = read_image(image_path);
      for (int y = 0; y < stored.height; ++y)
        for (int x = 0; x < stored.width; ++x)
          for (int c = 0; c < 3; ++c)
            mean_acc[static_cast<std::size_t>(c)] += stored.at(y, x, c);
      mean_pixels += stored.pixels();
    }
    Sample s;
    s.id = id;
    s.image_path = image_path;
    s.label_path = label_path;
    s.provenance = Provenance::GroundTruth;
    s.split = split_tag == 0 ? Split::TrainLabeled : Split::Val;
    samples.push_back(std::move(s));
  };

  for (int i = 0; i < n_train; ++i) emit(0, i);
  for (int i = 0; i < n_val; ++i) emit(1, i);

  std::array<double, 3> means{0.5, 0.5, 0.5};
  if (mean_pixels > 0)
    for (int c = 0; c < 3; ++c)
      means[static_cast<std::size_t>(c)] =
          mean_acc[static_cast<std::size_t>(c)] /
          static_cast<double>(mean_pixels);
  write_means((fs::path(out_dir) / "means.txt").string(), means);
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), samples);
  return samples;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_labeled(
    const std::vector<Sample>& train, double fraction, std::uint64_t seed) {
  const long n = static_cast<long>(train.size());
  if (n == 0) throw config_error("split_labeled: empty training set");
  const long k = std::lround(fraction * static_cast<double>(n));
  if (k < 1 || k > n)
    throw config_error("split_labeled: fraction " + std::to_string(fraction) +
                       " keeps " + std::to_string(k) + " of " +
                       std::to_string(n) + " samples");
  std::vector<long> idx(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng = derive_rng(seed, 0x5417);
  for (long i = n - 1; i > 0; --i) {
    const long j = rng.uniform_int(static_cast<int>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(j)]);
  }
  std::vector<bool> keep(static_cast<std::size_t>(n), false);
  for (long i = 0; i < k; ++i) keep[static_cast<std::size_t>(idx[i])] = true;

  std::vector<Sample> labeled, unlabeled;
  for (long i = 0; i < n; ++i) {
    const Sample& s = train[static_cast<std::size_t>(i)];
    if (keep[static_cast<std::size_t>(i)]) {
      labeled.push_back(s);
    } else {
      Sample u = s;
      u.label_path.clear();  // withheld, the file itself stays on disk
      u.provenance = Provenance::None;
      u.split = Split::TrainUnlabeled;
      unlabeled.push_back(std::move(u));
    }
  }
  return {std::move(labeled), std::move(unlabeled)};
}

}  // namespace sslseg

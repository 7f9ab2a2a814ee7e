#pragma once

// Paired two-view samples, ingestion from a CSV manifest of binary PPM
// images, one-vs-rest task construction and a synthetic two-view generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mocc/errors.hpp"
#include "mocc/rng.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

// Two views of one physical sample, each [C,S,S] with values in [0,1].
struct SamplePair {
  Tensor<float> left;
  Tensor<float> right;
  std::optional<int> class_id;
  std::string sample_id;
};

struct OccTask {
  int positive_class = 0;
  std::vector<SamplePair> train;
  std::vector<SamplePair> test;
  std::vector<int> test_labels; // 0 = positive class, 1 = anomaly
};

// Stack views of `samples` into [N,C,S,S] batches.
inline std::pair<Tensor<float>, Tensor<float>> stack_views(const std::vector<SamplePair> &samples,
                                                           std::span<const std::size_t> indices) {
  if (indices.empty())
    throw ParameterError("stack_views: no samples selected");
  const Shape &view = samples.at(indices[0]).left.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), view.begin(), view.end());
  Tensor<float> left(shape), right(shape);
  const std::size_t per = shape_size(view);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto &s = samples.at(indices[i]);
    if (s.left.shape() != view || s.right.shape() != view)
      throw DimensionError("stack_views: sample '" + s.sample_id + "' has geometry " +
                           shape_str(s.left.shape()) + "/" + shape_str(s.right.shape()) +
                           ", expected " + shape_str(view));
    std::copy_n(s.left.data(), per, left.data() + i * per);
    std::copy_n(s.right.data(), per, right.data() + i * per);
  }
  return {std::move(left), std::move(right)};
}

inline std::pair<Tensor<float>, Tensor<float>> stack_views(const std::vector<SamplePair> &samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i)
    all[i] = i;
  return stack_views(samples, all);
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), 8-bit RGB.

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels; // row-major, interleaved channels
};

namespace detail {

inline bool read_ppm_token(std::istream &in, std::string &token) {
  token.clear();
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n')
        ;
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty())
        return true;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return !token.empty();
}

} // namespace detail

inline RawImage read_ppm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IngestionError("cannot open image '" + path.string() + "'");
  std::string magic, w, h, maxval;
  if (!detail::read_ppm_token(in, magic) || magic != "P6")
    throw IngestionError("'" + path.string() + "' is not a binary PPM (P6) file");
  if (!detail::read_ppm_token(in, w) || !detail::read_ppm_token(in, h) ||
      !detail::read_ppm_token(in, maxval))
    throw IngestionError("'" + path.string() + "' has a truncated PPM header");
  RawImage img;
  try {
    img.width = std::stoul(w);
    img.height = std::stoul(h);
    if (std::stoul(maxval) != 255)
      throw IngestionError("'" + path.string() + "' is not an 8-bit PPM (maxval " + maxval + ")");
  } catch (const std::logic_error &) {
    throw IngestionError("'" + path.string() + "' has a malformed PPM header");
  }
  if (img.width == 0 || img.height == 0)
    throw IngestionError("'" + path.string() + "' has zero size");
  img.pixels.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char *>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
    throw IngestionError("'" + path.string() + "' has truncated pixel data");
  return img;
}

inline void write_ppm(const std::filesystem::path &path, const RawImage &img) {
  if (img.channels != 3 || img.pixels.size() != img.width * img.height * 3)
    throw ParameterError("write_ppm: image must be 8-bit RGB");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write image '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out)
    throw IoError("failed writing image '" + path.string() + "'");
}

// Bilinear resize to S x S (pixel-centre aligned, edge clamped), scale to
// [0,1], channel-first layout.
inline Tensor<float> preprocess_image(const RawImage &raw, std::size_t target) {
  if (raw.width == 0 || raw.height == 0 || raw.channels == 0 || target == 0)
    throw ParameterError("preprocess_image: zero-sized image or target");
  if (raw.pixels.size() != raw.width * raw.height * raw.channels)
    throw DimensionError("preprocess_image: pixel buffer does not match the image size");
  const std::size_t c_count = raw.channels;
  Tensor<float> out({c_count, target, target});
  const double sy = static_cast<double>(raw.height) / static_cast<double>(target);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(target);
  auto pixel = [&](std::size_t y, std::size_t x, std::size_t c) {
    return static_cast<double>(raw.pixels[(y * raw.width + x) * c_count + c]);
  };
  for (std::size_t y = 0; y < target; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(raw.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < target; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(raw.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < c_count; ++c) {
        const double top = (1.0 - wx) * pixel(y0, x0, c) + wx * pixel(y0, x1, c);
        const double bottom = (1.0 - wx) * pixel(y1, x0, c) + wx * pixel(y1, x1, c);
        const double v = ((1.0 - wy) * top + wy * bottom) / 255.0;
        out[(c * target + y) * target + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

// [C,H,W] tensor in [0,1] back to an 8-bit image (3 channels required).
inline RawImage to_raw_image(const Tensor<float> &image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("to_raw_image expects a [3,H,W] tensor, got " + shape_str(image.shape()));
  RawImage raw;
  raw.height = image.dim(1);
  raw.width = image.dim(2);
  raw.pixels.resize(raw.width * raw.height * 3);
  const std::size_t plane = raw.width * raw.height;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = std::clamp(static_cast<double>(image[c * plane + i]), 0.0, 1.0);
      raw.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return raw;
}

// ---------------------------------------------------------------------------
// Manifest: CSV with header `sample_id,left_path,right_path,class_id`; image
// paths are relative to the manifest's directory.

inline constexpr const char *kManifestHeader = "sample_id,left_path,right_path,class_id";

struct ManifestRow {
  std::size_t line = 0;
  std::string sample_id;
  std::string left_path;
  std::string right_path;
  std::optional<int> class_id;
};

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IngestionError("cannot open manifest '" + path.string() + "'");
  auto chomp = [](std::string &s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n'))
      s.pop_back();
  };
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("manifest '" + path.string() + "' is empty");
  chomp(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0)
    line.erase(0, 3);
  if (line != kManifestHeader)
    throw IngestionError("manifest '" + path.string() + "' must start with header '" +
                         kManifestHeader + "'");
  std::vector<ManifestRow> rows;
  std::unordered_set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    chomp(line);
    if (line.empty())
      continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
      fields.push_back(field);
    if (!line.empty() && line.back() == ',')
      fields.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 4)
      throw IngestionError(where + ": expected 4 fields, got " + std::to_string(fields.size()));
    ManifestRow row{lineno, fields[0], fields[1], fields[2], std::nullopt};
    if (row.sample_id.empty())
      throw IngestionError(where + ": empty sample_id");
    if (!fields[3].empty()) {
      try {
        std::size_t used = 0;
        row.class_id = std::stoi(fields[3], &used);
        if (used != fields[3].size())
          throw std::invalid_argument("trailing characters");
      } catch (const std::logic_error &) {
        throw IngestionError(where + ": class_id '" + fields[3] + "' is not an integer");
      }
    }
    if (!seen.insert(row.sample_id).second)
      throw IngestionError(where + ": duplicate sample_id '" + row.sample_id + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

// One SamplePair per manifest row, in row order, preprocessed to S x S.
inline std::vector<SamplePair> load_dataset(const std::filesystem::path &manifest_path,
                                            std::size_t input_size = 32) {
  const auto rows = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<SamplePair> out;
  out.reserve(rows.size());
  for (const auto &row : rows) {
    auto load_view = [&](const std::string &rel) {
      const auto full = base / rel;
      try {
        return preprocess_image(read_ppm(full), input_size);
      } catch (const IngestionError &e) {
        throw IngestionError(manifest_path.string() + ":" + std::to_string(row.line) +
                             " (sample '" + row.sample_id + "'): " + e.what());
      }
    };
    out.push_back({load_view(row.left_path), load_view(row.right_path), row.class_id,
                   row.sample_id});
  }
  return out;
}

// Write samples as PPM pairs under `dir/images/` plus `dir/manifest.csv`.
inline void export_dataset(const std::vector<SamplePair> &samples,
                           const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec)
    throw IoError("cannot create directory '" + (dir / "images").string() + "': " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest)
    throw IoError("cannot write '" + (dir / "manifest.csv").string() + "'");
  manifest << kManifestHeader << '\n';
  for (const auto &s : samples) {
    const std::string left = "images/" + s.sample_id + "_left.ppm";
    const std::string right = "images/" + s.sample_id + "_right.ppm";
    write_ppm(dir / left, to_raw_image(s.left));
    write_ppm(dir / right, to_raw_image(s.right));
    manifest << s.sample_id << ',' << left << ',' << right << ',';
    if (s.class_id)
      manifest << *s.class_id;
    manifest << '\n';
  }
  if (!manifest)
    throw IoError("failed writing '" + (dir / "manifest.csv").string() + "'");
}

// ---------------------------------------------------------------------------
// One-vs-rest task

// Seeded shuffle of the positive class; the first floor(fraction * N_pos)
// samples train, the rest are held out with every other-class sample.
inline OccTask build_task(const std::vector<SamplePair> &dataset, int positive_class,
                          double train_fraction = 0.66, std::uint64_t seed = 0) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ParameterError("build_task: train fraction must lie in (0, 1]");
  std::vector<std::size_t> positives, others;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].class_id)
      throw ParameterError("build_task: sample '" + dataset[i].sample_id + "' has no class_id");
    (*dataset[i].class_id == positive_class ? positives : others).push_back(i);
  }
  if (positives.empty())
    throw ParameterError("build_task: class " + std::to_string(positive_class) +
                         " does not occur in the dataset");
  Rng rng(seed);
  rng.shuffle(positives.begin(), positives.end());
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(positives.size()) + 1e-9));

  OccTask task;
  task.positive_class = positive_class;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (i < n_train) {
      task.train.push_back(dataset[positives[i]]);
    } else {
      task.test.push_back(dataset[positives[i]]);
      task.test_labels.push_back(0);
    }
  }
  for (auto i : others) {
    task.test.push_back(dataset[i]);
    task.test_labels.push_back(1);
  }
  return task;
}

// Distinct class ids in ascending order.
inline std::vector<int> class_ids(const std::vector<SamplePair> &dataset) {
  std::set<int> ids;
  for (const auto &s : dataset)
    if (s.class_id)
      ids.insert(*s.class_id);
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// Synthetic two-view data

struct SynthOptions {
  std::size_t n_per_class = 240;
  std::size_t n_classes = 4;
  std::size_t input_size = 32;
  double noise_sigma = 0.1;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
};

// Top-left corner (row, col) of class k's square in the left view: the
// square sits at the origin of quadrant k (row-major quadrant order).
inline std::pair<std::size_t, std::size_t> synth_square_origin(std::size_t class_index,
                                                               std::size_t size) {
  return {(class_index / 2) * (size / 2), (class_index % 2) * (size / 2)};
}

// Class k: a bright (S/4)x(S/4) square in the left view at the origin of
// quadrant k and, in the right view, at the horizontally mirrored position.
// Gaussian noise is added and values are clipped to [0,1].
inline std::vector<SamplePair> synth_generate(const SynthOptions &opt) {
  if (opt.n_per_class < 1)
    throw ParameterError("synth_generate: n_per_class must be at least 1");
  if (opt.n_classes < 2 || opt.n_classes > 4)
    throw ParameterError("synth_generate: n_classes must lie in [2, 4] (one per quadrant)");
  if (opt.input_size < 4 || opt.input_size % 4 != 0)
    throw ParameterError("synth_generate: input size must be a positive multiple of 4");
  if (opt.channels == 0)
    throw ParameterError("synth_generate: channel count must be positive");
  if (!(opt.noise_sigma >= 0.0))
    throw ParameterError("synth_generate: noise_sigma must be non-negative");

  const std::size_t s = opt.input_size;
  const std::size_t side = s / 4;
  Rng rng(opt.seed);
  std::vector<SamplePair> out;
  out.reserve(opt.n_per_class * opt.n_classes);
  for (std::size_t k = 0; k < opt.n_classes; ++k) {
    const auto [row0, col0] = synth_square_origin(k, s);
    const std::size_t mirror_col0 = s - col0 - side;
    for (std::size_t i = 0; i < opt.n_per_class; ++i) {
      Tensor<float> left({opt.channels, s, s}), right({opt.channels, s, s});
      auto paint = [&](Tensor<float> &view, std::size_t c0) {
        for (std::size_t c = 0; c < opt.channels; ++c)
          for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
              const bool inside = y >= row0 && y < row0 + side && x >= c0 && x < c0 + side;
              double v = inside ? 1.0 : 0.0;
              if (opt.noise_sigma > 0.0)
                v += opt.noise_sigma * rng.normal();
              view[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
      };
      paint(left, col0);
      paint(right, mirror_col0);
      std::ostringstream id;
      id << "c" << k << "_" << std::setw(4) << std::setfill('0') << i;
      out.push_back({std::move(left), std::move(right), static_cast<int>(k), id.str()});
    }
  }
  return out;
}

} // namespace mocc

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ingraph/features.hpp"
#include "ingraph/geometry.hpp"
#include "ingraph/rng.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

using json = nlohmann::json;

// Ground-truth record for one image: boxes plus <human, verb, object> triplets.
struct Annotation {
  struct Object {
    BoxPx box;
    int class_id = 0;
  };
  struct Hoi {
    std::size_t human_idx = 0;
    std::size_t object_idx = 0;
    int verb_id = 0;
  };

  std::string image_id;
  std::vector<BoxPx> humans;
  std::vector<Object> objects;
  std::vector<Hoi> hois;
};

// One detector output. class_id 0 means person.
struct DetectedInstance {
  BoxPx box;
  int class_id = 0;
  double score = 1.0;
};

struct DetectionRecord {
  std::string image_id;
  BoxPx human_box, object_box;
  int object_class = 0;
  int verb = 0;
  double score = 0.0;
};

struct FeatureRecord {
  std::string image_id;
  std::size_t pair_idx = 0;
  Shape shape;  // [H,W,D]
  std::vector<double> f_s, f_h, f_o;
};

struct SynthConfig {
  std::size_t num_images = 200;
  std::size_t image_size = 32;
  int num_verbs = 4;  // K
  std::uint64_t seed = 0;
  int num_object_classes = 6;

  void validate() const {
    if (num_images < 1) throw ValueError("num_images must be >= 1");
    if (image_size < 16) throw ValueError("image_size must be >= 16");
    if (num_verbs < 2) throw ValueError("num_verbs must be >= 2");
    if (num_object_classes < 2) throw ValueError("num_object_classes must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

// The label rule. Verbs are a fixed function of pair geometry and the
// object's class (which maps one-to-one to its painted color), so ground
// truth stays recomputable from the stored boxes:
//   overlap -> 0, object above human -> 1,
//   otherwise even class -> 2, odd class -> 3, folded into [0,num_verbs).
inline int verb_from_geometry(const BoxPx& human, const BoxPx& object,
                              int object_class, int num_verbs) {
  int raw;
  if (intersection_area(human, object) > 0.0)
    raw = 0;
  else if (object.cy() < human.cy())
    raw = 1;
  else
    raw = (object_class % 2 == 0) ? 2 : 3;
  return raw % num_verbs;
}

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb class_color(int class_id) {
  // class 0 is the person; the rest cycle through a fixed high-contrast
  // palette where even classes are green-saturated and odd ones are not,
  // so class parity stays linearly readable from the pixels.
  static constexpr Rgb palette[] = {
      {1.00, 0.15, 0.10},  // person: red
      {0.10, 0.10, 1.00},  // 1 odd: blue
      {0.10, 1.00, 0.10},  // 2 even: green
      {1.00, 0.10, 0.90},  // 3 odd: magenta
      {0.10, 1.00, 0.90},  // 4 even: cyan
      {0.55, 0.10, 0.55},  // 5 odd: purple
      {0.75, 1.00, 0.10},  // 6 even: yellow-green
  };
  return palette[static_cast<std::size_t>(class_id) % 7];
}

inline void paint_box(Tensor& pixels, const BoxPx& b, const Rgb& c) {
  const std::size_t h = pixels.dim(0), w = pixels.dim(1);
  auto& v = pixels.mutable_values();
  const auto x1 = static_cast<std::size_t>(std::max(0.0, b.x1));
  const auto y1 = static_cast<std::size_t>(std::max(0.0, b.y1));
  const auto x2 = std::min(w, static_cast<std::size_t>(std::max(0.0, b.x2)));
  const auto y2 = std::min(h, static_cast<std::size_t>(std::max(0.0, b.y2)));
  for (std::size_t y = y1; y < y2; ++y)
    for (std::size_t x = x1; x < x2; ++x) {
      v[(y * w + x) * 3 + 0] = c.r;
      v[(y * w + x) * 3 + 1] = c.g;
      v[(y * w + x) * 3 + 2] = c.b;
    }
}

}  // namespace detail

// Draws one human rectangle and 1-2 object rectangles per image. Placement
// mode (overlapping / above / below) and object class decide the verb; both
// cues are painted into the pixels.
inline std::pair<std::vector<Image>, std::vector<Annotation>> generate_synthetic(
    const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double im = static_cast<double>(cfg.image_size);

  std::vector<Image> images;
  std::vector<Annotation> annotations;
  images.reserve(cfg.num_images);
  annotations.reserve(cfg.num_images);

  for (std::size_t idx = 0; idx < cfg.num_images; ++idx) {
    const std::size_t num_objects = 1 + (rng.uniform() < 0.5 ? 1 : 0);

    // Sample modes and sizes first so the human can be placed where every
    // requested above/below relation still fits.
    std::vector<int> modes(num_objects);
    std::vector<double> ow(num_objects), oh(num_objects);
    double need_above = 0.0, need_below = 0.0;
    for (std::size_t o = 0; o < num_objects; ++o) {
      // 0 overlap, 1 above, 2 below. Below pairs are the only ones whose
      // verb needs the object's color on top of the geometry, so they are
      // kept rarer to balance the per-category difficulty.
      const double u = rng.uniform();
      modes[o] = u < 0.4 ? 0 : (u < 0.8 ? 1 : 2);
      ow[o] = std::floor(rng.uniform(0.20, 0.30) * im);
      oh[o] = std::floor(rng.uniform(0.20, 0.28) * im);
      if (modes[o] == 1) need_above = std::max(need_above, oh[o] + 3.0);
      if (modes[o] == 2) need_below = std::max(need_below, oh[o] + 3.0);
    }

    const double hw = std::floor(rng.uniform(0.28, 0.40) * im);
    const double hh = std::floor(rng.uniform(0.25, 0.33) * im);
    const double hy_lo = std::max(1.0, need_above);
    const double hy_hi = im - hh - std::max(1.0, need_below);
    const double hx = std::floor(rng.uniform(1.0, im - hw - 1.0));
    const double hy = std::floor(rng.uniform(hy_lo, std::max(hy_lo + 1.0, hy_hi)));
    const BoxPx human{hx, hy, hx + hw, hy + hh};

    Annotation ann;
    ann.image_id = "img_" + std::string(5 - std::min<std::size_t>(
                                               5, std::to_string(idx).size()),
                                        '0') +
                   std::to_string(idx);
    ann.humans.push_back(human);

    Image img;
    img.id = ann.image_id;
    img.pixels = Tensor({cfg.image_size, cfg.image_size, 3}, 0.08);
    detail::paint_box(img.pixels, human, detail::class_color(0));

    for (std::size_t o = 0; o < num_objects; ++o) {
      const int class_id = 1 + static_cast<int>(rng.index(
                                   static_cast<std::size_t>(cfg.num_object_classes)));
      BoxPx box;
      for (int attempt = 0; attempt < 20; ++attempt) {
        double x1, y1;
        if (modes[o] == 0) {  // center inside the human box: guaranteed overlap
          const double cx = rng.uniform(human.x1 + 1.0, human.x2 - 1.0);
          const double cy = rng.uniform(human.y1 + 1.0, human.y2 - 1.0);
          x1 = std::floor(std::clamp(cx - ow[o] / 2.0, 0.0, im - ow[o]));
          y1 = std::floor(std::clamp(cy - oh[o] / 2.0, 0.0, im - oh[o]));
        } else {
          x1 = std::floor(rng.uniform(std::max(1.0, human.x1 - 4.0),
                                      std::min(im - ow[o] - 1.0, human.x2 + 4.0 - ow[o])));
          if (modes[o] == 1)
            y1 = std::floor(rng.uniform(1.0, human.y1 - oh[o] - 2.0));
          else
            y1 = std::floor(rng.uniform(human.y2 + 2.0, im - oh[o] - 1.0));
        }
        box = BoxPx{x1, y1, x1 + ow[o], y1 + oh[o]};
        bool clashes = false;
        for (const auto& prev : ann.objects)
          if (intersection_area(box, prev.box) > 0.0) clashes = true;
        if (!clashes) break;
      }
      ann.objects.push_back({box, class_id});
      detail::paint_box(img.pixels, box, detail::class_color(class_id));
      const int verb = verb_from_geometry(human, box, class_id, cfg.num_verbs);
      ann.hois.push_back({0, o, verb});
    }

    images.push_back(std::move(img));
    annotations.push_back(std::move(ann));
  }
  return {std::move(images), std::move(annotations)};
}

// ---------------------------------------------------------------------------
// Candidate pairing (detector-score thresholds)
// ---------------------------------------------------------------------------

inline constexpr double kHumanScoreThreshold = 0.8;
inline constexpr double kObjectScoreThreshold = 0.4;

// Cross product of confident persons and confident non-person objects.
// Both thresholds are strict.
inline std::vector<std::pair<DetectedInstance, DetectedInstance>> candidate_pairs(
    const std::vector<DetectedInstance>& instances) {
  std::vector<std::pair<DetectedInstance, DetectedInstance>> pairs;
  for (const auto& h : instances) {
    if (h.class_id != 0 || !(h.score > kHumanScoreThreshold)) continue;
    for (const auto& o : instances) {
      if (o.class_id == 0 || !(o.score > kObjectScoreThreshold)) continue;
      pairs.emplace_back(h, o);
    }
  }
  return pairs;
}

// Ground-truth boxes as perfect detections (score 1.0); jitter > 0 perturbs
// boxes and scores while keeping every instance above its pairing threshold.
inline std::vector<DetectedInstance> detections_from_annotation(
    const Annotation& ann, double image_w, double image_h, double jitter = 0.0,
    Rng* rng = nullptr) {
  const auto perturb = [&](const BoxPx& b, double score_span) {
    DetectedInstance det;
    det.box = b;
    det.score = 1.0;
    if (jitter > 0.0 && rng != nullptr) {
      const double dx = jitter * 0.15 * b.width();
      const double dy = jitter * 0.15 * b.height();
      BoxPx j{b.x1 + rng->uniform(-dx, dx), b.y1 + rng->uniform(-dy, dy),
              b.x2 + rng->uniform(-dx, dx), b.y2 + rng->uniform(-dy, dy)};
      j = clip_box(j, image_w, image_h);
      if (j.valid()) det.box = j;
      det.score = 1.0 - jitter * score_span * rng->uniform();
    }
    return det;
  };
  std::vector<DetectedInstance> out;
  for (const BoxPx& h : ann.humans) {
    DetectedInstance det = perturb(h, 0.19);  // stays above the 0.8 threshold
    det.class_id = 0;
    out.push_back(det);
  }
  for (const auto& o : ann.objects) {
    DetectedInstance det = perturb(o.box, 0.59);  // stays above 0.4
    det.class_id = o.class_id;
    out.push_back(det);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines record files
// ---------------------------------------------------------------------------

namespace detail {

inline json box_to_json(const BoxPx& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline const json& require_field(const json& j, const char* key,
                                 const std::string& where) {
  if (!j.contains(key))
    throw ParseError(where + ": missing field \"" + std::string(key) + "\"");
  return j.at(key);
}

inline BoxPx box_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4)
    throw ParseError(where + ": box must be [x1,y1,x2,y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

template <typename PerLine>
inline void read_jsonl(const std::string& path, PerLine&& fn) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      fn(j, where);
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
}

}  // namespace detail

inline void write_annotations(const std::string& path,
                              const std::vector<Annotation>& anns) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  for (const Annotation& a : anns) {
    json objs = json::array();
    for (const auto& o : a.objects)
      objs.push_back({{"box", detail::box_to_json(o.box)}, {"class", o.class_id}});
    json hois = json::array();
    for (const auto& h : a.hois)
      hois.push_back(json::array({h.human_idx, h.object_idx, h.verb_id}));
    json humans = json::array();
    for (const auto& h : a.humans) humans.push_back(detail::box_to_json(h));
    const json rec = {{"image_id", a.image_id},
                      {"humans", humans},
                      {"objects", objs},
                      {"hois", hois}};
    os << rec.dump() << '\n';
  }
}

inline std::vector<Annotation> read_annotations(const std::string& path) {
  std::vector<Annotation> out;
  detail::read_jsonl(path, [&](const json& j, const std::string& where) {
    Annotation a;
    a.image_id = detail::require_field(j, "image_id", where).get<std::string>();
    for (const json& h : detail::require_field(j, "humans", where))
      a.humans.push_back(detail::box_from_json(h, where));
    for (const json& o : detail::require_field(j, "objects", where)) {
      Annotation::Object obj;
      obj.box = detail::box_from_json(detail::require_field(o, "box", where), where);
      obj.class_id = detail::require_field(o, "class", where).get<int>();
      a.objects.push_back(obj);
    }
    for (const json& h : detail::require_field(j, "hois", where)) {
      if (!h.is_array() || h.size() != 3)
        throw ParseError(where +
                         ": hois entry must be [human_idx, object_idx, verb_id]; "
                         "missing field \"verb_id\"");
      Annotation::Hoi hoi;
      hoi.human_idx = h[0].get<std::size_t>();
      hoi.object_idx = h[1].get<std::size_t>();
      hoi.verb_id = h[2].get<int>();
      if (hoi.human_idx >= a.humans.size() || hoi.object_idx >= a.objects.size())
        throw ParseError(where + ": hois entry references a missing instance");
      a.hois.push_back(hoi);
    }
    out.push_back(std::move(a));
  });
  return out;
}

inline void write_detections(const std::string& path,
                             const std::vector<DetectionRecord>& dets) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  for (const DetectionRecord& d : dets) {
    const json rec = {{"image_id", d.image_id},
                      {"human_box", detail::box_to_json(d.human_box)},
                      {"object_box", detail::box_to_json(d.object_box)},
                      {"object_class", d.object_class},
                      {"verb", d.verb},
                      {"score", d.score}};
    os << rec.dump() << '\n';
  }
}

inline std::vector<DetectionRecord> read_detections(const std::string& path) {
  std::vector<DetectionRecord> out;
  detail::read_jsonl(path, [&](const json& j, const std::string& where) {
    DetectionRecord d;
    d.image_id = detail::require_field(j, "image_id", where).get<std::string>();
    d.human_box =
        detail::box_from_json(detail::require_field(j, "human_box", where), where);
    d.object_box =
        detail::box_from_json(detail::require_field(j, "object_box", where), where);
    d.object_class = detail::require_field(j, "object_class", where).get<int>();
    d.verb = detail::require_field(j, "verb", where).get<int>();
    d.score = detail::require_field(j, "score", where).get<double>();
    out.push_back(std::move(d));
  });
  return out;
}

inline void write_features(const std::string& path,
                           const std::vector<FeatureRecord>& recs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  for (const FeatureRecord& r : recs) {
    const json rec = {{"image_id", r.image_id}, {"pair_idx", r.pair_idx},
                      {"f_s", r.f_s},           {"f_h", r.f_h},
                      {"f_o", r.f_o},           {"shape", r.shape}};
    os << rec.dump() << '\n';
  }
}

inline std::vector<FeatureRecord> read_features(const std::string& path) {
  std::vector<FeatureRecord> out;
  detail::read_jsonl(path, [&](const json& j, const std::string& where) {
    FeatureRecord r;
    r.image_id = detail::require_field(j, "image_id", where).get<std::string>();
    r.pair_idx = detail::require_field(j, "pair_idx", where).get<std::size_t>();
    r.shape = detail::require_field(j, "shape", where).get<Shape>();
    if (r.shape.size() != 3) throw ParseError(where + ": shape must be [H,W,D]");
    r.f_s = detail::require_field(j, "f_s", where).get<std::vector<double>>();
    r.f_h = detail::require_field(j, "f_h", where).get<std::vector<double>>();
    r.f_o = detail::require_field(j, "f_o", where).get<std::vector<double>>();
    const std::size_t n = shape_numel(r.shape);
    if (r.f_s.size() != n || r.f_h.size() != n || r.f_o.size() != n)
      throw ParseError(where + ": feature length does not match shape");
    out.push_back(std::move(r));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Raw image container ("IGIM"): 16-byte header, then f64 pixels. No codecs.
// Header: magic "IGIM" | u32 height | u32 width | u32 channels, little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kImageMagic[4] = {'I', 'G', 'I', 'M'};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("image file: truncated while reading " + what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline void write_f64_le(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("image file: truncated while reading " + what);
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline void write_image(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  os.write(kImageMagic, 4);
  detail::write_u32(os, static_cast<std::uint32_t>(img.height()));
  detail::write_u32(os, static_cast<std::uint32_t>(img.width()));
  detail::write_u32(os, 3);
  for (double v : img.pixels.values()) detail::write_f64_le(os, v);
  if (!os) throw IoError("failed writing image: " + path);
}

inline Image read_image(const std::string& path, const std::string& id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kImageMagic, 4) != 0)
    throw IoError("not an image file (bad magic): " + path);
  const std::uint32_t h = detail::read_u32(is, "height");
  const std::uint32_t w = detail::read_u32(is, "width");
  const std::uint32_t c = detail::read_u32(is, "channels");
  if (c != 3) throw IoError("image file " + path + ": expected 3 channels");
  std::vector<double> v(static_cast<std::size_t>(h) * w * c);
  for (double& x : v) x = detail::read_f64_le(is, "pixels");
  Image img;
  img.id = id;
  img.pixels = Tensor::from_values({h, w, c}, std::move(v));
  return img;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: DIR/annotations.jsonl + DIR/images/<id>.igim,
// optional DIR/features.jsonl (backbone bypass).
// ---------------------------------------------------------------------------

struct LoadedDataset {
  std::vector<Image> images;  // aligned with annotations
  std::vector<Annotation> annotations;
  std::map<std::pair<std::string, std::size_t>, FeatureRecord> features;

  bool has_precomputed_features() const { return !features.empty(); }
};

inline void write_dataset(const std::string& dir, const std::vector<Image>& images,
                          const std::vector<Annotation>& anns) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  write_annotations((fs::path(dir) / "annotations.jsonl").string(), anns);
  for (const Image& img : images)
    write_image((fs::path(dir) / "images" / (img.id + ".igim")).string(), img);
}

inline LoadedDataset load_dataset(const std::string& dir, bool with_images = true) {
  namespace fs = std::filesystem;
  LoadedDataset ds;
  ds.annotations = read_annotations((fs::path(dir) / "annotations.jsonl").string());
  const fs::path feat = fs::path(dir) / "features.jsonl";
  if (fs::exists(feat)) {
    for (FeatureRecord& r : read_features(feat.string())) {
      auto key = std::make_pair(r.image_id, r.pair_idx);
      ds.features.emplace(std::move(key), std::move(r));
    }
  }
  if (with_images && !ds.has_precomputed_features()) {
    ds.images.reserve(ds.annotations.size());
    for (const Annotation& a : ds.annotations)
      ds.images.push_back(
          read_image((fs::path(dir) / "images" / (a.image_id + ".igim")).string(),
                     a.image_id));
  }
  return ds;
}

}  // namespace ingraph

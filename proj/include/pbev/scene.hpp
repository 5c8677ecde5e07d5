#pragma once

// Scene records, their JSON-lines serialization and the synthetic world
// generator used by the harness.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbev/common.hpp"
#include "pbev/eval.hpp"
#include "pbev/geometry.hpp"

namespace pbev {

struct SceneRecord {
  std::string scene_id;
  double timestamp{0.0};  // frame time in seconds
  BevExtent extent;
  std::vector<BevBox> gt_boxes;
  std::optional<std::vector<BevBox>> pred_boxes;
};

// JSON -------------------------------------------------------------------------

class FormatError : public Error {
 public:
  using Error::Error;
};

inline nlohmann::json box_to_json(const BevBox& b, const std::vector<std::string>& classes, bool with_confidence) {
  nlohmann::json j;
  j["class"] = b.class_id >= 0 && static_cast<std::size_t>(b.class_id) < classes.size()
                   ? classes[static_cast<std::size_t>(b.class_id)]
                   : std::to_string(b.class_id);
  j["cx"] = b.cx;
  j["cy"] = b.cy;
  j["cz"] = b.cz;
  j["w"] = b.w;
  j["h"] = b.h;
  j["l"] = b.l;
  j["sin_yaw"] = b.sin_yaw;
  j["cos_yaw"] = b.cos_yaw;
  j["vx"] = b.vx;
  j["vy"] = b.vy;
  if (with_confidence) j["confidence"] = b.confidence;
  if (!b.attribute.empty()) j["attribute"] = b.attribute;
  return j;
}

inline BevBox box_from_json(const nlohmann::json& j, const std::vector<std::string>& classes) {
  try {
    BevBox b;
    const std::string cls = j.at("class").get<std::string>();
    const auto it = std::find(classes.begin(), classes.end(), cls);
    if (it == classes.end()) throw FormatError("unknown class '" + cls + "'");
    b.class_id = static_cast<int>(it - classes.begin());
    b.cx = j.at("cx").get<double>();
    b.cy = j.at("cy").get<double>();
    b.cz = j.value("cz", 0.0);
    b.w = j.at("w").get<double>();
    b.h = j.at("h").get<double>();
    b.l = j.at("l").get<double>();
    if (j.contains("yaw")) {
      b.set_yaw(j.at("yaw").get<double>());
    } else {
      b.sin_yaw = j.at("sin_yaw").get<double>();
      b.cos_yaw = j.at("cos_yaw").get<double>();
    }
    b.vx = j.value("vx", 0.0);
    b.vy = j.value("vy", 0.0);
    b.confidence = j.value("confidence", 1.0);
    b.attribute = j.value("attribute", std::string{});
    return normalized(std::move(b));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed box: ") + e.what());
  }
}

inline nlohmann::json extent_to_json(const BevExtent& e) {
  return {{"x_min", e.x_min}, {"x_max", e.x_max}, {"y_min", e.y_min},
          {"y_max", e.y_max}, {"grid_h", e.grid_h}, {"grid_w", e.grid_w}};
}

inline BevExtent extent_from_json(const nlohmann::json& j) {
  BevExtent e;
  e.x_min = j.at("x_min").get<double>();
  e.x_max = j.at("x_max").get<double>();
  e.y_min = j.at("y_min").get<double>();
  e.y_max = j.at("y_max").get<double>();
  e.grid_h = j.value("grid_h", 200);
  e.grid_w = j.value("grid_w", 200);
  validate(e);
  return e;
}

inline nlohmann::json scene_to_json(const SceneRecord& s, const std::vector<std::string>& classes = default_class_names()) {
  nlohmann::json j;
  j["scene_id"] = s.scene_id;
  j["timestamp"] = s.timestamp;
  j["extent"] = extent_to_json(s.extent);
  j["gt_boxes"] = nlohmann::json::array();
  for (const auto& b : s.gt_boxes) j["gt_boxes"].push_back(box_to_json(b, classes, false));
  if (s.pred_boxes) {
    j["pred_boxes"] = nlohmann::json::array();
    for (const auto& b : *s.pred_boxes) j["pred_boxes"].push_back(box_to_json(b, classes, true));
  }
  return j;
}

inline SceneRecord scene_from_json(const nlohmann::json& j, const std::vector<std::string>& classes = default_class_names()) {
  try {
    SceneRecord s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.timestamp = j.value("timestamp", 0.0);
    s.extent = j.contains("extent") ? extent_from_json(j.at("extent")) : BevExtent{};
    for (const auto& b : j.at("gt_boxes")) s.gt_boxes.push_back(box_from_json(b, classes));
    if (j.contains("pred_boxes")) {
      s.pred_boxes.emplace();
      for (const auto& b : j.at("pred_boxes")) s.pred_boxes->push_back(box_from_json(b, classes));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scene record: ") + e.what());
  }
}

// One compact JSON object per line, UTF-8.
inline void write_corpus(std::ostream& os, const std::vector<SceneRecord>& corpus,
                         const std::vector<std::string>& classes = default_class_names()) {
  for (const auto& s : corpus) os << scene_to_json(s, classes).dump() << '\n';
}

inline std::vector<SceneRecord> read_corpus(std::istream& is, const std::vector<std::string>& classes = default_class_names()) {
  std::vector<SceneRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    SceneRecord s = scene_from_json(j, classes);
    if (!ids.insert(s.scene_id).second) throw FormatError("duplicate scene_id '" + s.scene_id + "'");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<EvalFrame> to_eval_frames(const std::vector<SceneRecord>& corpus) {
  std::vector<EvalFrame> frames;
  frames.reserve(corpus.size());
  for (const auto& s : corpus) frames.push_back({s.gt_boxes, s.pred_boxes.value_or(std::vector<BevBox>{})});
  return frames;
}

// Synthetic world --------------------------------------------------------------

struct ClassTemplate {
  double length, width, height;  // footprint w (along heading), h (across), vertical l
  double max_speed;              // m/s
  const char* moving_attr;
  const char* static_attr;
};

// Mean sizes roughly following the NuScenes detection classes.
inline const std::vector<ClassTemplate>& default_class_templates() {
  static const std::vector<ClassTemplate> t{
      {4.6, 1.9, 1.7, 12.0, "vehicle.moving", "vehicle.parked"},
      {6.9, 2.5, 2.8, 10.0, "vehicle.moving", "vehicle.parked"},
      {11.0, 2.9, 3.5, 10.0, "vehicle.moving", "vehicle.parked"},
      {12.0, 2.9, 3.9, 8.0, "vehicle.moving", "vehicle.parked"},
      {6.4, 2.8, 3.2, 2.0, "vehicle.moving", "vehicle.parked"},
      {0.7, 0.7, 1.8, 1.5, "pedestrian.moving", "pedestrian.standing"},
      {2.1, 0.8, 1.5, 8.0, "cycle.with_rider", "cycle.without_rider"},
      {1.7, 0.6, 1.3, 5.0, "cycle.with_rider", "cycle.without_rider"},
      {0.4, 0.4, 1.1, 0.0, "", ""},
      {0.5, 2.5, 1.0, 0.0, "", ""},
  };
  return t;
}

struct WorldParams {
  std::size_t n_scenes{50};
  std::size_t min_objects{5};
  std::size_t max_objects{20};
  double min_separation{2.0};  // minimum pairwise center distance, meters
  double margin{2.0};          // keep centers this far inside the extent
  BevExtent extent{};
  // Relative class frequencies, one per class template.
  std::vector<double> class_weights{5.0, 1.0, 0.5, 0.5, 0.5, 3.0, 1.0, 1.0, 2.0, 2.0};
  double size_jitter{0.1};  // relative
  double frame_interval{0.5};
  std::size_t max_attempts{20000};
};

inline std::vector<SceneRecord> generate_scenes(const WorldParams& wp, std::uint64_t seed) {
  validate(wp.extent);
  const auto& templates = default_class_templates();
  if (wp.class_weights.size() != templates.size()) throw DomainError("class_weights must match the class templates");
  if (wp.min_objects > wp.max_objects) throw DomainError("min_objects exceeds max_objects");
  if (!(wp.min_separation >= 0.0) || !(wp.margin >= 0.0)) throw DomainError("separation and margin must be >= 0");
  if (2.0 * wp.margin >= std::min(wp.extent.width(), wp.extent.height())) throw DomainError("margin leaves no room");

  std::vector<SceneRecord> corpus;
  for (std::size_t s = 0; s < wp.n_scenes; ++s) {
    Rng rng(derive_seed(seed, s));
    SceneRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "scene-%04zu", s);
    rec.scene_id = id;
    rec.timestamp = static_cast<double>(s) * wp.frame_interval;
    rec.extent = wp.extent;

    std::uniform_int_distribution<std::size_t> count_dist(wp.min_objects, wp.max_objects);
    const std::size_t n = count_dist(rng);
    std::discrete_distribution<int> class_dist(wp.class_weights.begin(), wp.class_weights.end());
    std::uniform_real_distribution<double> xs(wp.extent.x_min + wp.margin, wp.extent.x_max - wp.margin);
    std::uniform_real_distribution<double> ys(wp.extent.y_min + wp.margin, wp.extent.y_max - wp.margin);
    std::uniform_real_distribution<double> jitter(1.0 - wp.size_jitter, 1.0 + wp.size_jitter);
    std::uniform_real_distribution<double> yaw_dist(-kPi, kPi);

    for (std::size_t k = 0; k < n; ++k) {
      Vec2 c{};
      bool placed = false;
      for (std::size_t attempt = 0; attempt < wp.max_attempts && !placed; ++attempt) {
        c = {xs(rng), ys(rng)};
        placed = std::all_of(rec.gt_boxes.begin(), rec.gt_boxes.end(),
                             [&](const BevBox& o) { return norm(o.center() - c) >= wp.min_separation; });
      }
      if (!placed) throw DomainError("generate_scenes: separation constraint is infeasible");
      const int cls = class_dist(rng);
      const ClassTemplate& t = templates[static_cast<std::size_t>(cls)];
      BevBox b = make_box(c.x, c.y, t.length * jitter(rng), t.width * jitter(rng), yaw_dist(rng), cls, 1.0);
      b.l = t.height * jitter(rng);
      b.cz = 0.5 * b.l;
      const double moving_draw = uniform01(rng);
      const double speed = moving_draw < 0.5 ? 0.0 : t.max_speed * uniform01(rng);
      b.vx = speed * b.cos_yaw;
      b.vy = speed * b.sin_yaw;
      if (*t.moving_attr) b.attribute = speed > 0.5 ? t.moving_attr : t.static_attr;
      rec.gt_boxes.push_back(std::move(b));
    }
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace pbev

#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vremd/data.hpp"

namespace vremd {

// Thin reader for annotation files in the PoseTrack JSON layout
// ({"annotations": [{"image_id", "track_id", "keypoints": [x,y,v,...]}]}),
// mapped onto the same PoseAnnotation type the synthetic pipeline uses so
// real sequences can be attached without touching the core.
inline std::vector<PoseAnnotation> read_posetrack_annotations(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json doc;
  in >> doc;
  if (!doc.contains("annotations") || !doc["annotations"].is_array())
    throw std::runtime_error(path + ": missing \"annotations\" array");

  std::vector<PoseAnnotation> out;
  for (const auto& entry : doc["annotations"]) {
    PoseAnnotation ann;
    ann.frame_index = entry.value("image_id", 0L);
    ann.person_id = entry.value("track_id", 0);
    const auto& kp = entry.at("keypoints");
    if (!kp.is_array() || kp.size() % 3 != 0)
      throw std::runtime_error(path + ": keypoints must be [x,y,v] triples");
    for (std::size_t i = 0; i + 2 < kp.size(); i += 3) {
      ann.joints.push_back({kp[i].get<double>(), kp[i + 1].get<double>()});
      ann.visibility.push_back(kp[i + 2].get<double>() > 0);
    }
    out.push_back(std::move(ann));
  }
  return out;
}

}  // namespace vremd

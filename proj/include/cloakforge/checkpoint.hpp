#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloakforge/detector.hpp"
#include "cloakforge/errors.hpp"

namespace cloakforge::det {

inline constexpr const char* kCheckpointMagic = "CLOAKFORGE-CKPT-1";

// Layout: magic line, one-line JSON header, then raw little-endian doubles.
// The header describes the architecture and a name/shape table for every
// parameter tensor, so a checkpoint is self-describing.
inline void save_checkpoint(DetectorModel& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = model.kind == DetectorKind::ONE_STAGE ? "one_stage" : "two_stage";
  header["classes"] = model.classes;
  header["input_w"] = model.input_w;
  header["input_h"] = model.input_h;
  header["backbone_channels"] = model.backbone_cfg.channels;
  header["backbone_strides"] = model.backbone_cfg.strides;
  header["grid_base_w"] = model.grid_base_w;
  header["grid_base_h"] = model.grid_base_h;
  header["anchor"] = {{"strides", model.anchor_cfg.strides},
                      {"scales", model.anchor_cfg.scales},
                      {"aspect_ratios", model.anchor_cfg.aspect_ratios},
                      {"pos_iou", model.anchor_cfg.pos_iou},
                      {"neg_iou", model.anchor_cfg.neg_iou},
                      {"sample_count", model.anchor_cfg.sample_count},
                      {"pos_fraction", model.anchor_cfg.pos_fraction}};
  nlohmann::json tensors = nlohmann::json::array();
  size_t total = 0;
  auto params = model.named_parameters();
  for (auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"count", t->size()}});
    total += t->size();
  }
  header["tensors"] = tensors;
  header["total_doubles"] = total;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (auto& [name, t] : params)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) throw IoError("short write on checkpoint: " + path.string());
}

inline DetectorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kCheckpointMagic)
    throw ParseError("checkpoint: bad magic (expected " + std::string(kCheckpointMagic) + ")");
  if (!std::getline(in, header_line)) throw ParseError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint: bad header: ") + e.what());
  }

  try {
    std::vector<std::string> classes = header.at("classes").get<std::vector<std::string>>();
    BackboneConfig bb;
    bb.channels = header.at("backbone_channels").get<std::vector<int>>();
    bb.strides = header.at("backbone_strides").get<std::vector<int>>();
    int input = header.at("input_w").get<int>();
    std::string kind = header.at("kind").get<std::string>();

    DetectorModel model;
    if (kind == "one_stage") {
      model = make_one_stage(classes, 0, input, bb);
    } else if (kind == "two_stage") {
      AnchorConfig ac;
      const auto& a = header.at("anchor");
      ac.strides = a.at("strides").get<std::vector<double>>();
      ac.scales = a.at("scales").get<std::vector<double>>();
      ac.aspect_ratios = a.at("aspect_ratios").get<std::vector<double>>();
      ac.pos_iou = a.at("pos_iou").get<double>();
      ac.neg_iou = a.at("neg_iou").get<double>();
      ac.sample_count = a.at("sample_count").get<int>();
      ac.pos_fraction = a.at("pos_fraction").get<double>();
      model = make_two_stage(classes, 0, input, ac, bb);
    } else {
      throw ParseError("checkpoint: unknown kind '" + kind + "'");
    }
    model.grid_base_w = header.at("grid_base_w").get<double>();
    model.grid_base_h = header.at("grid_base_h").get<double>();

    auto params = model.named_parameters();
    const auto& table = header.at("tensors");
    if (table.size() != params.size())
      throw ParseError("checkpoint: tensor table does not match the architecture");
    for (size_t i = 0; i < params.size(); ++i) {
      if (table[i].at("name").get<std::string>() != params[i].first ||
          table[i].at("count").get<size_t>() != params[i].second->size())
        throw ParseError("checkpoint: tensor '" + params[i].first + "' mismatch");
      in.read(reinterpret_cast<char*>(params[i].second->data()),
              static_cast<std::streamsize>(params[i].second->size() * sizeof(double)));
      if (!in) throw ParseError("checkpoint: truncated tensor data");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header field: ") + e.what());
  }
}

}  // namespace cloakforge::det

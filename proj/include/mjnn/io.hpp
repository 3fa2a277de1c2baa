#pragma once

// JSON model, gain and certificate files.
//
// Model file fields: modes[].{A,B,C,D1,D2,E,M} (row-major nested arrays),
// transitions (N x N, "?" marks an unknown cell), sector.{F1,F2},
// delay.{min,max}, activation.{type: "tanh", scales}, and optionally
// protocol.{nodes, weights}, completion (N x N) and gains.
// A gain grid is gains[mode][node], each cell either a matrix or
// {scale, matrix} meaning scale * matrix.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mjnn/augmentation.hpp"
#include "mjnn/conditions.hpp"
#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/model.hpp"
#include "mjnn/wtod.hpp"

namespace mjnn::io {

using json = nlohmann::json;

struct ModelFile {
  MjnnModel model;
  Protocol protocol;
  std::optional<Matrix> completion;
  std::optional<EstimatorGains> gains;
};

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::InvalidConfig, what + ": expected a non-empty 2-D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().is_array() ? j.front().size() : 0);
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorKind::DimensionMismatch, what + ": ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw Error(ErrorKind::InvalidConfig, what + ": non-numeric entry");
      out(r, c) = v.get<double>();
    }
  }
  return out;
}

inline json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline EstimatorGains gains_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
    throw Error(ErrorKind::GridMismatch, "gains must be a non-empty [mode][node] grid");
  }
  const std::size_t modes = j.size();
  const std::size_t nodes = j.front().size();
  std::vector<Matrix> cells;
  for (std::size_t i = 0; i < modes; ++i) {
    if (!j[i].is_array() || j[i].size() != nodes) throw Error(ErrorKind::GridMismatch, "gain grid rows differ in length");
    for (std::size_t o = 0; o < nodes; ++o) {
      const auto& cell = j[i][o];
      const std::string what = "gain (" + std::to_string(i + 1) + "," + std::to_string(o + 1) + ")";
      if (cell.is_object()) {
        const double scale = cell.value("scale", 1.0);
        cells.push_back(scale * matrix_from_json(cell.at("matrix"), what));
      } else {
        cells.push_back(matrix_from_json(cell, what));
      }
    }
  }
  EstimatorGains g(modes, nodes, cells.front().rows(), cells.front().cols());
  for (std::size_t i = 0; i < modes; ++i) {
    for (std::size_t o = 0; o < nodes; ++o) g.at(i, o) = cells[i * nodes + o];
  }
  return g;
}

inline json gains_to_json(const EstimatorGains& g) {
  json grid = json::array();
  for (std::size_t i = 0; i < g.modes(); ++i) {
    json row = json::array();
    for (std::size_t o = 0; o < g.nodes(); ++o) row.push_back(matrix_to_json(g.at(i, o)));
    grid.push_back(std::move(row));
  }
  return grid;
}

inline ModelFile model_from_json(const json& j) {
  ModelFile f;
  try {
    for (const auto& m : j.at("modes")) {
      ModeMatrices mm;
      mm.A = matrix_from_json(m.at("A"), "A");
      mm.B = matrix_from_json(m.at("B"), "B");
      mm.C = matrix_from_json(m.at("C"), "C");
      mm.D1 = matrix_from_json(m.at("D1"), "D1");
      mm.D2 = matrix_from_json(m.at("D2"), "D2");
      mm.E = matrix_from_json(m.at("E"), "E");
      mm.M = matrix_from_json(m.at("M"), "M");
      f.model.modes.push_back(std::move(mm));
    }
    const auto& tp = j.at("transitions");
    if (!tp.is_array()) throw Error(ErrorKind::InvalidConfig, "transitions must be an array");
    f.model.transitions = TransitionSpec(tp.size());
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (!tp[i].is_array() || tp[i].size() != tp.size()) {
        throw Error(ErrorKind::DimensionMismatch, "transitions must be square");
      }
      for (std::size_t k = 0; k < tp.size(); ++k) {
        const auto& cell = tp[i][k];
        if (cell.is_string() && cell.get<std::string>() == "?") {
          f.model.transitions.mask(i, k);
        } else if (cell.is_number()) {
          f.model.transitions.set(i, k, cell.get<double>());
        } else {
          throw Error(ErrorKind::InvalidConfig, "transition cells must be numbers or \"?\"");
        }
      }
    }
    f.model.sector.F1 = matrix_from_json(j.at("sector").at("F1"), "F1");
    f.model.sector.F2 = matrix_from_json(j.at("sector").at("F2"), "F2");
    f.model.delay.tau_min = j.at("delay").at("min").get<int>();
    f.model.delay.tau_max = j.at("delay").at("max").get<int>();
    const auto& act = j.at("activation");
    if (act.value("type", std::string("tanh")) != "tanh") {
      throw Error(ErrorKind::InvalidConfig, "only the tanh activation family can be read from file");
    }
    const auto scales = act.at("scales").get<std::vector<double>>();
    f.model.activation = Activation::scaled_tanh(Eigen::Map<const Vector>(scales.data(), static_cast<Eigen::Index>(scales.size())));

    const Eigen::Index m = f.model.dims().m;
    if (j.contains("protocol")) {
      const auto& pj = j.at("protocol");
      f.protocol.partition = NodePartition(pj.at("nodes").get<std::vector<Eigen::Index>>());
      if (pj.contains("weights")) {
        for (const auto& w : pj.at("weights")) f.protocol.weights.Q.push_back(matrix_from_json(w, "protocol weight"));
      } else {
        f.protocol.weights = WtodWeights::identity(f.protocol.partition);
      }
    } else {
      f.protocol.partition = NodePartition::scalar_nodes(m);
      f.protocol.weights = WtodWeights::identity(f.protocol.partition);
    }
    if (j.contains("completion")) f.completion = matrix_from_json(j.at("completion"), "completion");
    if (j.contains("gains")) f.gains = gains_from_json(j.at("gains"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("model file: ") + e.what());
  }
  return f;
}

inline ModelFile load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

inline json model_to_json(const MjnnModel& model, const Protocol& protocol) {
  json j;
  j["modes"] = json::array();
  for (const auto& mm : model.modes) {
    j["modes"].push_back({{"A", matrix_to_json(mm.A)},
                          {"B", matrix_to_json(mm.B)},
                          {"C", matrix_to_json(mm.C)},
                          {"D1", matrix_to_json(mm.D1)},
                          {"D2", matrix_to_json(mm.D2)},
                          {"E", matrix_to_json(mm.E)},
                          {"M", matrix_to_json(mm.M)}});
  }
  json tp = json::array();
  for (std::size_t i = 0; i < model.transitions.modes(); ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < model.transitions.modes(); ++k) {
      const auto& p = model.transitions.at(i, k);
      if (p) {
        row.push_back(*p);
      } else {
        row.push_back("?");
      }
    }
    tp.push_back(std::move(row));
  }
  j["transitions"] = std::move(tp);
  j["sector"] = {{"F1", matrix_to_json(model.sector.F1)}, {"F2", matrix_to_json(model.sector.F2)}};
  j["delay"] = {{"min", model.delay.tau_min}, {"max", model.delay.tau_max}};
  const Vector& sc = model.activation.scales();
  j["activation"] = {{"type", "tanh"}, {"scales", std::vector<double>(sc.data(), sc.data() + sc.size())}};
  json weights = json::array();
  for (const auto& q : protocol.weights.Q) weights.push_back(matrix_to_json(q));
  j["protocol"] = {{"nodes", protocol.partition.dims()}, {"weights", std::move(weights)}};
  return j;
}

/// Gain grid from a standalone gains file ({"gains": ...}) or a bare grid.
inline EstimatorGains load_gains(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    return gains_from_json(j.is_object() ? j.at("gains") : j);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("gains file: ") + e.what());
  }
}

inline void save_gains(const std::filesystem::path& path, const EstimatorGains& gains) {
  write_text(path, json{{"gains", gains_to_json(gains)}}.dump(2) + "\n");
}

inline json certificate_to_json(const Certificate& c) {
  json j;
  j["P1"] = json::array();
  for (const auto& p : c.P1) j["P1"].push_back(matrix_to_json(p));
  j["Z"] = matrix_to_json(c.Z);
  j["rho1"] = c.rho1;
  j["rho2"] = c.rho2;
  json sigma = json::array();
  for (std::size_t i = 0; i < c.sigma.modes(); ++i) {
    json row = json::array();
    for (std::size_t o = 0; o < c.sigma.nodes(); ++o) row.push_back(c.sigma.at(i, o));
    sigma.push_back(std::move(row));
  }
  j["sigma"] = std::move(sigma);
  if (c.gamma) j["gamma"] = *c.gamma;
  return j;
}

inline Certificate certificate_from_json(const json& j) {
  Certificate c;
  try {
    for (const auto& p : j.at("P1")) c.P1.push_back(matrix_from_json(p, "P1"));
    c.Z = matrix_from_json(j.at("Z"), "Z");
    c.rho1 = j.at("rho1").get<std::vector<double>>();
    c.rho2 = j.at("rho2").get<std::vector<double>>();
    const auto& s = j.at("sigma");
    const std::size_t modes = s.size();
    const std::size_t nodes = modes > 0 ? s.front().size() : 0;
    c.sigma = ModeNodeGrid<std::vector<double>>(modes, nodes);
    for (std::size_t i = 0; i < modes; ++i) {
      for (std::size_t o = 0; o < nodes; ++o) c.sigma.at(i, o) = s[i][o].get<std::vector<double>>();
    }
    if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("certificate: ") + e.what());
  }
  return c;
}

}  // namespace mjnn::io

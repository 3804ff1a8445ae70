#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string_view>
#include <unistd.h>

#include "json.hpp"

#include "damm/error.hpp"
#include "damm/evalkit.hpp"

namespace damm {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_number(std::string_view token, double& value) {
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(value);
}

// Column count of positions given a header, or 0 when the header is malformed.
Eigen::Index header_position_columns(const std::vector<std::string_view>& names, bool& with_velocities) {
  const auto total = static_cast<Eigen::Index>(names.size());
  Eigen::Index d = 0;
  while (d < total && names[static_cast<std::size_t>(d)] == "x" + std::to_string(d + 1)) ++d;
  if (d == total) {
    with_velocities = false;
    return d;
  }
  if (2 * d != total) return 0;
  for (Eigen::Index j = 0; j < d; ++j)
    if (names[static_cast<std::size_t>(d + j)] != "v" + std::to_string(j + 1)) return 0;
  with_velocities = true;
  return d;
}

Demonstration finish(std::vector<std::vector<double>> rows, std::vector<Eigen::Index> starts, Eigen::Index d,
                     bool with_velocities, std::optional<double> dt) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) throw UsageError("no trajectory samples");
  Demonstration demo;
  demo.positions.resize(n, d);
  demo.velocities.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      demo.positions(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (with_velocities) demo.velocities(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d + j)];
    }
  demo.trajectory_starts = std::move(starts);
  if (dt) {
    if (!(*dt > 0.0) || !std::isfinite(*dt)) throw UsageError("dt must be positive");
    demo.dt = *dt;
  }
  if (!with_velocities) {
    if (!dt) throw UsageError("velocities are absent; a time step (dt) is required");
    demo.velocities = finite_difference_velocities(demo.positions, demo.trajectory_starts, *dt);
  }
  demo.attractor = default_attractor(demo);
  return demo;
}

std::vector<std::vector<std::vector<double>>> json_trajectories(const json& j, const char* field) {
  auto number_row = [&](const json& row) {
    if (!row.is_array() || row.empty()) throw ParseError(std::string(field) + ": rows must be nonempty arrays", 0);
    std::vector<double> out;
    for (const auto& v : row) {
      if (!v.is_number()) throw ParseError(std::string(field) + ": entries must be numbers", 0);
      out.push_back(v.get<double>());
      if (!std::isfinite(out.back())) throw ParseError(std::string(field) + ": non-finite entry", 0);
    }
    return out;
  };
  if (!j.is_array() || j.empty()) throw ParseError(std::string(field) + " must be a nonempty array", 0);
  std::vector<std::vector<std::vector<double>>> trajs;
  const bool nested = j.front().is_array() && !j.front().empty() && j.front().front().is_array();
  if (nested) {
    for (const auto& t : j) {
      if (!t.is_array() || t.empty()) throw ParseError(std::string(field) + ": empty trajectory", 0);
      std::vector<std::vector<double>> rows;
      for (const auto& r : t) rows.push_back(number_row(r));
      trajs.push_back(std::move(rows));
    }
  } else {
    std::vector<std::vector<double>> rows;
    for (const auto& r : j) rows.push_back(number_row(r));
    trajs.push_back(std::move(rows));
  }
  return trajs;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Eigen::MatrixXd finite_difference_velocities(const Eigen::MatrixXd& positions,
                                             const std::vector<Eigen::Index>& trajectory_starts, double dt) {
  if (!(dt > 0.0)) throw UsageError("finite differences need dt > 0");
  const Eigen::Index n = positions.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, positions.cols());
  for (std::size_t k = 0; k < trajectory_starts.size(); ++k) {
    const Eigen::Index b = trajectory_starts[k];
    const Eigen::Index e = k + 1 < trajectory_starts.size() ? trajectory_starts[k + 1] : n;
    if (e - b < 2) throw UsageError("trajectory " + std::to_string(k) + " has fewer than 2 samples");
    v.row(b) = (positions.row(b + 1) - positions.row(b)) / dt;
    v.row(e - 1) = (positions.row(e - 1) - positions.row(e - 2)) / dt;
    for (Eigen::Index i = b + 1; i + 1 < e; ++i) v.row(i) = (positions.row(i + 1) - positions.row(i - 1)) / (2.0 * dt);
  }
  return v;
}

Demonstration parse_trajectories_csv(const std::string& text, std::optional<double> dt) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  Eigen::Index d = 0, columns = 0;
  bool with_velocities = false, have_header = false;
  std::vector<std::vector<double>> rows;
  std::vector<Eigen::Index> starts;
  bool open = false;  // current trajectory has samples
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line = trim(line.substr(3));
    if (line.empty() || line.substr(0, 3) == "---") {
      if (!have_header && !line.empty()) throw ParseError("separator before the header", line_no);
      open = false;
      continue;
    }
    const auto tokens = split_commas(line);
    if (!have_header) {
      have_header = true;
      double probe = 0.0;
      if (parse_number(tokens.front(), probe)) {
        // Headerless file: every column is a position coordinate.
        d = columns = static_cast<Eigen::Index>(tokens.size());
        with_velocities = false;
      } else {
        d = header_position_columns(tokens, with_velocities);
        if (d == 0) throw ParseError("header must be x1,...,xd optionally followed by v1,...,vd", line_no);
        columns = with_velocities ? 2 * d : d;
        continue;
      }
    }
    if (static_cast<Eigen::Index>(tokens.size()) != columns)
      throw ParseError("expected " + std::to_string(columns) + " values, found " + std::to_string(tokens.size()),
                       line_no);
    std::vector<double> row(tokens.size());
    for (std::size_t j = 0; j < tokens.size(); ++j)
      if (!parse_number(tokens[j], row[j]))
        throw ParseError("malformed number '" + std::string(tokens[j]) + "'", line_no);
    if (!open) {
      starts.push_back(static_cast<Eigen::Index>(rows.size()));
      open = true;
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError("empty trajectory file", 0);
  if (d < 2) throw ParseError("trajectories need at least 2 position columns", 1);
  return finish(std::move(rows), std::move(starts), d, with_velocities, dt);
}

Demonstration parse_trajectories_json(const std::string& text, std::optional<double> dt) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), 0);
  }
  if (!j.is_object() || !j.contains("positions")) throw ParseError("JSON trajectory file needs \"positions\"", 0);
  const auto pos = json_trajectories(j["positions"], "positions");
  std::optional<std::vector<std::vector<std::vector<double>>>> vel;
  if (j.contains("velocities") && !j["velocities"].is_null()) vel = json_trajectories(j["velocities"], "velocities");
  if (!dt && j.contains("dt") && !j["dt"].is_null()) {
    if (!j["dt"].is_number()) throw ParseError("dt must be a number", 0);
    dt = j["dt"].get<double>();
  }
  const auto d = static_cast<Eigen::Index>(pos.front().front().size());
  if (vel && vel->size() != pos.size()) throw ParseError("positions and velocities differ in trajectory count", 0);
  std::vector<std::vector<double>> rows;
  std::vector<Eigen::Index> starts;
  for (std::size_t t = 0; t < pos.size(); ++t) {
    if (vel && (*vel)[t].size() != pos[t].size())
      throw ParseError("positions and velocities differ in length in trajectory " + std::to_string(t), 0);
    starts.push_back(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < pos[t].size(); ++i) {
      std::vector<double> row = pos[t][i];
      if (static_cast<Eigen::Index>(row.size()) != d) throw ParseError("inconsistent position dimension", 0);
      if (vel) {
        const auto& v = (*vel)[t][i];
        if (static_cast<Eigen::Index>(v.size()) != d) throw ParseError("inconsistent velocity dimension", 0);
        row.insert(row.end(), v.begin(), v.end());
      }
      rows.push_back(std::move(row));
    }
  }
  if (d < 2) throw ParseError("trajectories need at least 2 position dimensions", 0);
  Demonstration demo = finish(std::move(rows), std::move(starts), d, vel.has_value(), dt);
  if (j.contains("attractor") && !j["attractor"].is_null()) {
    const auto& a = j["attractor"];
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != d) throw ParseError("attractor has the wrong size", 0);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!a[static_cast<std::size_t>(i)].is_number()) throw ParseError("attractor entries must be numbers", 0);
      demo.attractor[i] = a[static_cast<std::size_t>(i)].get<double>();
    }
  }
  return demo;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << contents;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw UsageError("failed writing '" + path + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw UsageError("cannot replace '" + path + "'");
  }
}

namespace {

TrajectoryFormat resolve_format(const std::string& path, TrajectoryFormat format) {
  if (format != TrajectoryFormat::kAuto) return format;
  const auto ext = std::filesystem::path(path).extension().string();
  return ext == ".json" ? TrajectoryFormat::kJson : TrajectoryFormat::kCsv;
}

}  // namespace

Demonstration load_trajectories(const std::string& path, TrajectoryFormat format, std::optional<double> dt) {
  const std::string text = read_file(path);
  return resolve_format(path, format) == TrajectoryFormat::kJson ? parse_trajectories_json(text, dt)
                                                                 : parse_trajectories_csv(text, dt);
}

std::string format_trajectories_csv(const Demonstration& demo) {
  std::string out;
  const Eigen::Index d = demo.dim();
  for (Eigen::Index j = 0; j < d; ++j) out += (j ? ",x" : "x") + std::to_string(j + 1);
  for (Eigen::Index j = 0; j < d; ++j) out += ",v" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t k = 0; k < demo.trajectory_count(); ++k) {
    if (k) out += "---\n";
    for (Eigen::Index i = demo.trajectory_begin(k); i < demo.trajectory_end(k); ++i) {
      for (Eigen::Index j = 0; j < d; ++j) out += (j ? "," : "") + format_number(demo.positions(i, j));
      for (Eigen::Index j = 0; j < d; ++j) out += "," + format_number(demo.velocities(i, j));
      out += '\n';
    }
  }
  return out;
}

std::string format_trajectories_json(const Demonstration& demo) {
  json pos = json::array(), vel = json::array();
  for (std::size_t k = 0; k < demo.trajectory_count(); ++k) {
    json tp = json::array(), tv = json::array();
    for (Eigen::Index i = demo.trajectory_begin(k); i < demo.trajectory_end(k); ++i) {
      json rp = json::array(), rv = json::array();
      for (Eigen::Index j = 0; j < demo.dim(); ++j) {
        rp.push_back(demo.positions(i, j));
        rv.push_back(demo.velocities(i, j));
      }
      tp.push_back(std::move(rp));
      tv.push_back(std::move(rv));
    }
    pos.push_back(std::move(tp));
    vel.push_back(std::move(tv));
  }
  json j;
  j["positions"] = std::move(pos);
  j["velocities"] = std::move(vel);
  if (demo.dt > 0.0) j["dt"] = demo.dt;
  j["attractor"] = std::vector<double>(demo.attractor.data(), demo.attractor.data() + demo.attractor.size());
  return j.dump() + "\n";
}

void save_trajectories(const Demonstration& demo, const std::string& path, TrajectoryFormat format) {
  demo.validate();
  write_file_atomic(path, resolve_format(path, format) == TrajectoryFormat::kJson ? format_trajectories_json(demo)
                                                                                 : format_trajectories_csv(demo));
}

}  // namespace damm

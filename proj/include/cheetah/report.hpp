#pragma once

#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cheetah/costmodel.hpp"
#include "cheetah/protocol.hpp"

namespace cheetah::report {

using nlohmann::json;

inline constexpr std::string_view kReportFormat = "cheetah-report/1";
inline constexpr std::string_view kBenchFormat = "cheetah-bench/1";

/// One secure inference: measurements only. Rendering lives below.
struct RunReport {
  std::string network;
  std::string backend;
  std::uint64_t seed = 0;
  std::vector<proto::StageStats> layers;
  std::uint64_t offline_up = 0, offline_down = 0;
  std::uint64_t saturations = 0;
  double wall_ms = 0;
  std::vector<double> output;
  std::optional<double> max_abs_error;  // present iff compared against the plaintext oracle
  std::optional<bool> argmax_agree;
  std::vector<std::vector<cost::CostRow>> baselines;  // per layer: predicted rows for comparison schemes

  phe::OpCounters total_server() const {
    phe::OpCounters t;
    for (const auto& l : layers) t += l.server;
    return t;
  }
  phe::OpCounters total_client() const {
    phe::OpCounters t;
    for (const auto& l : layers) t += l.client;
    return t;
  }
  std::uint64_t online_bytes() const {
    std::uint64_t b = 0;
    for (const auto& l : layers) b += l.bytes_up + l.bytes_down;
    return b;
  }
  std::uint64_t offline_bytes() const { return offline_up + offline_down; }
};

inline RunReport from_run(const std::string& network, const std::string& backend, const proto::RunResult& r) {
  RunReport rep;
  rep.network = network;
  rep.backend = backend;
  rep.layers = r.stages;
  rep.offline_up = r.totals.offline_up;
  rep.offline_down = r.totals.offline_down;
  rep.saturations = r.totals.saturations;
  rep.output = r.output;
  return rep;
}

inline void compare_with_oracle(RunReport& rep, const std::vector<double>& ref) {
  double m = 0;
  for (std::size_t i = 0; i < ref.size() && i < rep.output.size(); ++i) m = std::max(m, std::fabs(ref[i] - rep.output[i]));
  if (ref.size() != rep.output.size()) m = std::numeric_limits<double>::infinity();
  rep.max_abs_error = m;
  rep.argmax_agree = !ref.empty() && ref.size() == rep.output.size() && nn::argmax(ref) == nn::argmax(rep.output);
}

/// Cost-model input describing a plan stage's linear layer.
inline cost::CostInput cost_input(const nn::NetworkSpec& net, const proto::Stage& st, std::size_t n) {
  cost::CostInput in;
  in.n = n;
  const auto& layer = net.layers[st.linear_layer];
  if (auto* c = std::get_if<nn::Conv>(&layer)) {
    in.layer = c->c_i == 1 && c->c_o == 1 ? cost::LayerKind::siso : cost::LayerKind::mimo;
    in.c_i = c->c_i;
    in.c_o = c->c_o;
    in.r = c->kp;
    in.in = st.in_shape.h;
    in.stride = c->stride;
  } else {
    const auto& f = std::get<nn::Fc>(layer);
    in.layer = cost::LayerKind::fc;
    in.n_i = f.n_i;
    in.n_o = f.n_o;
  }
  return in;
}

/// Predicted rows for every scheme applicable to each stage's linear layer.
inline std::vector<std::vector<cost::CostRow>> baseline_rows(const nn::NetworkSpec& net, std::size_t n) {
  std::vector<std::vector<cost::CostRow>> out;
  for (const auto& st : proto::build_plan(net, n).stages) {
    const auto in = cost_input(net, st, n);
    std::vector<cost::CostRow> rows;
    if (in.layer == cost::LayerKind::fc && in.n_i > n) {
      out.push_back(rows);
      continue;
    }
    for (const auto& s : cost::schemes_for(in.layer)) rows.push_back(cost::costmodel(s, in));
    out.push_back(std::move(rows));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const phe::OpCounters& c) {
  return {{"mult_plain", c.mult_plain}, {"add_ct", c.add_ct}, {"add_plain", c.add_plain}, {"perm", c.perm},
          {"encrypt", c.encrypt},       {"decrypt", c.decrypt}, {"bytes_sent", c.bytes_sent},
          {"bytes_received", c.bytes_received}, {"mult", c.mult()}, {"add", c.add()}};
}

inline phe::OpCounters counters_from_json(const json& j) {
  phe::OpCounters c;
  c.mult_plain = j.at("mult_plain").get<std::uint64_t>();
  c.add_ct = j.at("add_ct").get<std::uint64_t>();
  c.add_plain = j.at("add_plain").get<std::uint64_t>();
  c.perm = j.at("perm").get<std::uint64_t>();
  c.encrypt = j.value("encrypt", std::uint64_t{0});
  c.decrypt = j.value("decrypt", std::uint64_t{0});
  c.bytes_sent = j.value("bytes_sent", std::uint64_t{0});
  c.bytes_received = j.value("bytes_received", std::uint64_t{0});
  return c;
}

inline json to_json(const cost::CostRow& r) {
  json j = {{"scheme", r.scheme}, {"layer", cost::to_string(r.layer)}, {"perm", r.perm}, {"mult", r.mult}, {"add", r.add}};
  j["comm_bits"] = r.comm_bits ? json(*r.comm_bits) : json(nullptr);
  return j;
}

inline cost::CostRow cost_row_from_json(const json& j) {
  cost::CostRow r;
  r.scheme = j.at("scheme").get<std::string>();
  r.layer = cost::layer_kind_from_string(j.at("layer").get<std::string>());
  r.perm = j.at("perm").get<double>();
  r.mult = j.at("mult").get<double>();
  r.add = j.at("add").get<double>();
  if (j.contains("comm_bits") && !j["comm_bits"].is_null()) r.comm_bits = j["comm_bits"].get<double>();
  return r;
}

inline json to_json(const proto::StageStats& s) {
  return {{"label", s.label},
          {"server", to_json(s.server)},
          {"server_linear", to_json(s.server_linear)},
          {"client", to_json(s.client)},
          {"bytes_up", s.bytes_up},
          {"bytes_down", s.bytes_down},
          {"linear_bytes", s.linear_bytes},
          {"bytes_by_type", s.bytes_by_type},
          {"client_ms", s.client_ms},
          {"server_ms", s.server_ms},
          {"in_cts", s.in_cts},
          {"out_cts", s.out_cts},
          {"compact_cts", s.compact_cts}};
}

inline proto::StageStats stage_from_json(const json& j) {
  proto::StageStats s;
  s.label = j.at("label").get<std::string>();
  s.server = counters_from_json(j.at("server"));
  if (j.contains("server_linear")) s.server_linear = counters_from_json(j["server_linear"]);
  s.client = counters_from_json(j.at("client"));
  s.bytes_up = j.at("bytes_up").get<std::uint64_t>();
  s.bytes_down = j.at("bytes_down").get<std::uint64_t>();
  s.linear_bytes = j.value("linear_bytes", std::uint64_t{0});
  if (j.contains("bytes_by_type")) s.bytes_by_type = j["bytes_by_type"].get<std::map<std::string, std::uint64_t>>();
  s.client_ms = j.value("client_ms", 0.0);
  s.server_ms = j.value("server_ms", 0.0);
  s.in_cts = j.value("in_cts", std::size_t{0});
  s.out_cts = j.value("out_cts", std::size_t{0});
  s.compact_cts = j.value("compact_cts", std::size_t{0});
  return s;
}

inline json to_json(const RunReport& r) {
  json layers = json::array();
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    json l = to_json(r.layers[i]);
    json b = json::array();
    if (i < r.baselines.size())
      for (const auto& row : r.baselines[i]) b.push_back(to_json(row));
    l["cost_model"] = b;
    layers.push_back(std::move(l));
  }
  json j = {{"format", kReportFormat},
            {"network", r.network},
            {"backend", r.backend},
            {"seed", r.seed},
            {"layers", layers},
            {"total",
             {{"server", to_json(r.total_server())},
              {"client", to_json(r.total_client())},
              {"perm", r.total_server().perm + r.total_client().perm}}},
            {"bytes",
             {{"online", r.online_bytes()},
              {"offline", r.offline_bytes()},
              {"offline_up", r.offline_up},
              {"offline_down", r.offline_down}}},
            {"wall_ms", r.wall_ms},
            {"saturations", r.saturations},
            {"output", r.output}};
  if (r.max_abs_error) {
    j["oracle"] = {{"max_abs_error", *r.max_abs_error}, {"argmax_agree", r.argmax_agree.value_or(false)}};
  }
  return j;
}

inline RunReport report_from_json(const json& j) {
  if (j.value("format", std::string()) != kReportFormat) {
    throw std::invalid_argument("not a " + std::string(kReportFormat) + " document");
  }
  RunReport r;
  r.network = j.at("network").get<std::string>();
  r.backend = j.at("backend").get<std::string>();
  r.seed = j.value("seed", std::uint64_t{0});
  for (const auto& l : j.at("layers")) {
    r.layers.push_back(stage_from_json(l));
    std::vector<cost::CostRow> rows;
    if (l.contains("cost_model"))
      for (const auto& c : l["cost_model"]) rows.push_back(cost_row_from_json(c));
    r.baselines.push_back(std::move(rows));
  }
  const auto& b = j.at("bytes");
  r.offline_up = b.value("offline_up", std::uint64_t{0});
  r.offline_down = b.value("offline_down", std::uint64_t{0});
  r.wall_ms = j.value("wall_ms", 0.0);
  r.saturations = j.value("saturations", std::uint64_t{0});
  r.output = j.value("output", std::vector<double>{});
  if (j.contains("oracle")) {
    r.max_abs_error = j["oracle"].at("max_abs_error").get<double>();
    r.argmax_agree = j["oracle"].at("argmax_agree").get<bool>();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

inline std::string kib(std::uint64_t bytes) { return fmt(static_cast<double>(bytes) / 1024.0, 1); }

inline std::string render_grid(const std::vector<std::string>& head, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    w[c] = head[c].size();
    for (const auto& r : rows) w[c] = std::max(w[c], r[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << (c ? "  " : "") << std::setw(static_cast<int>(w[c])) << (c == 0 ? std::left : std::right) << cells[c];
    }
    out << "\n";
  };
  line(head);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out << std::string(total + 2 * (w.size() - 1), '-') << "\n";
  for (const auto& r : rows) line(r);
  return out.str();
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

}  // namespace detail

/// Per-layer table: measured CHEETAH counts next to the cost model's baseline predictions.
inline std::string render_table(const RunReport& r) {
  std::ostringstream out;
  out << "network " << r.network << ", backend " << r.backend << "\n\n";
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const auto& l = r.layers[i];
    const auto t = l.total();
    rows.push_back({std::to_string(i) + " " + l.label, "CHEETAH (measured)", std::to_string(t.perm), std::to_string(t.mult()),
                    std::to_string(t.add()), detail::kib(l.bytes_up + l.bytes_down),
                    detail::fmt(l.client_ms + l.server_ms, 3)});
    if (i < r.baselines.size()) {
      for (const auto& b : r.baselines[i]) {
        if (b.scheme == "cheetah") continue;
        rows.push_back({"", b.scheme + " (model)", detail::fmt(b.perm, 0), detail::fmt(b.mult, 0), detail::fmt(b.add, 0),
                        b.comm_bits ? detail::fmt(*b.comm_kib(), 1) : "-", "-"});
      }
    }
  }
  out << detail::render_grid({"layer", "method", "#Perm", "#Mult", "#Add", "comm KiB", "time ms"}, rows);
  out << "\nonline " << detail::kib(r.online_bytes()) << " KiB, offline " << detail::kib(r.offline_bytes())
      << " KiB, wall " << detail::fmt(r.wall_ms, 1) << " ms, saturations " << r.saturations << "\n";
  if (r.max_abs_error) {
    out << "oracle: max abs error " << std::scientific << std::setprecision(3) << *r.max_abs_error << ", argmax "
        << (r.argmax_agree.value_or(false) ? "agrees" : "DIFFERS") << "\n";
  }
  return out.str();
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> c{"network",     "backend",    "seed",       "layer",       "label",
                                          "perm",        "mult",       "add",        "server_mult", "server_add",
                                          "client_mult", "client_add", "bytes_up",   "bytes_down",  "linear_bytes",
                                          "client_ms",   "server_ms",  "max_abs_error", "argmax_agree"};
  return c;
}

inline std::string render_csv(const std::vector<RunReport>& reports) {
  std::ostringstream out;
  const auto& cols = csv_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << "\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      const auto& l = r.layers[i];
      const auto t = l.total();
      const std::vector<std::string> cells{
          detail::csv_escape(r.network), r.backend, std::to_string(r.seed), std::to_string(i), detail::csv_escape(l.label),
          std::to_string(t.perm), std::to_string(t.mult()), std::to_string(t.add()), std::to_string(l.server.mult()),
          std::to_string(l.server.add()), std::to_string(l.client.mult()), std::to_string(l.client.add()),
          std::to_string(l.bytes_up), std::to_string(l.bytes_down), std::to_string(l.linear_bytes),
          detail::fmt(l.client_ms, 3), detail::fmt(l.server_ms, 3),
          r.max_abs_error ? detail::fmt(*r.max_abs_error, 8) : "",
          r.argmax_agree ? (*r.argmax_agree ? "1" : "0") : ""};
      for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "," : "") << cells[c];
      out << "\n";
    }
  }
  return out.str();
}

/// Reports contained in a document: a single run report or a bench file with a "trials" array.
inline std::vector<RunReport> reports_from_document(const json& j) {
  const auto format = j.value("format", std::string());
  if (format == kReportFormat) return {report_from_json(j)};
  if (format == kBenchFormat) {
    std::vector<RunReport> out;
    for (const auto& t : j.at("trials")) out.push_back(report_from_json(t));
    return out;
  }
  throw std::invalid_argument("unrecognized report format '" + format + "'");
}

}  // namespace cheetah::report

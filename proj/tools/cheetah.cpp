#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cheetah/costmodel.hpp"
#include "cheetah/keyfile.hpp"
#include "cheetah/model_io.hpp"
#include "cheetah/protocol.hpp"
#include "cheetah/report.hpp"
#include "cheetah/transport.hpp"

namespace fs = std::filesystem;
using namespace cheetah;
using nlohmann::json;

namespace {

enum Exit { ok = 0, usage = 1, protocol = 2, verification = 3 };

class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string default_backend() {
  if (const char* env = std::getenv("CHEETAH_BACKEND"); env && *env) return env;
  return "rlwe";
}

std::string checked_backend(const std::string& name) {
  if (name != "clear" && name != "rlwe") throw std::invalid_argument("unknown backend '" + name + "' (clear, rlwe)");
  return name;
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

/// Calls fn(backend) with a backend of the named kind. Encryption randomness comes from the OS unless seeded.
template <class F>
auto with_backend(const std::string& name, const phe::PheParams& params, std::optional<std::uint64_t> enc_seed, F&& fn) {
  if (checked_backend(name) == "clear") return fn(phe::ClearBackend(params));
  auto ctx = std::make_shared<const phe::RlweContext>(params);
  return fn(enc_seed ? phe::RlweBackend(ctx, *enc_seed) : phe::RlweBackend::with_entropy(ctx));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io::FormatError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  const auto raw = io::read_file(path);
  try {
    return json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw io::FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void print_scores(const std::vector<double>& scores) {
  for (double s : scores) std::printf("%.9g\n", s);
  std::fflush(stdout);
}

fp::FpParams fixed_point(const phe::PheParams& p, int scale_bits, double clip) {
  fp::FpParams f{scale_bits, p.p, clip};
  f.validate();
  return f;
}

nn::Tensor load_input(const fs::path& path, const nn::NetworkSpec& net) {
  auto x = io::load_tensor(path);
  if (x.size() != net.input.size()) {
    throw std::invalid_argument("input " + path.string() + " has " + std::to_string(x.size()) + " values, network expects " +
                                nn::to_string(net.input));
  }
  return x;
}

keys::KeyFile load_role_key(const fs::path& path, phe::Owner want) {
  auto k = keys::load_key(path);
  if (k.key.owner != want) {
    throw std::invalid_argument(path.string() + " holds a " + std::string(phe::to_string(k.key.owner)) +
                                " key, expected " + std::string(phe::to_string(want)));
  }
  return k;
}

std::string bytes_line(const net::ByteCounters& c) {
  std::string s = "sent " + std::to_string(c.sent) + " B, received " + std::to_string(c.received) + " B";
  for (const auto& [type, n] : c.received_by_type) s += ", in " + type + " " + std::to_string(n);
  for (const auto& [type, n] : c.sent_by_type) s += ", out " + type + " " + std::to_string(n);
  return s;
}

/// Load a network from a directory, a manifest, or a template name with --seed.
nn::NetworkSpec network_arg(const std::string& arg, std::uint64_t seed) {
  if (fs::exists(arg)) return io::load_network(arg);
  try {
    return nn::gen_random_network(arg, seed);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("'" + arg + "' is neither a network path nor a template (tiny, netA, netB, vgghead)");
  }
}

// ---------------------------------------------------------------------------
// Commands

struct KeygenArgs {
  std::string params_file, role = "client", out;
  std::uint64_t seed = 1;
};

int cmd_keygen(const KeygenArgs& a) {
  keys::KeyFile k;
  k.params = a.params_file.empty() ? phe::PheParams::make() : keys::load_params(a.params_file);
  k.seed = a.seed;
  k.key = phe::ClearBackend(k.params).keygen(phe::owner_from_string(a.role), a.seed);
  keys::save_key(a.out, k);
  std::cerr << "wrote " << a.role << " key (n=" << k.params.n << ", p=" << k.params.p << ", params digest "
            << std::hex << k.params.digest() << std::dec << ") to " << a.out << "\n";
  return ok;
}

struct MakeNetArgs {
  std::string templ, out_dir;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> input_seed;
};

int cmd_make_net(const MakeNetArgs& a) {
  const auto net = nn::gen_random_network(a.templ, a.seed);
  const fs::path dir = a.out_dir;
  io::save_network(dir, net);
  io::save_public_manifest(dir / "public.json", net);
  io::save_tensor(dir / "input.chtw", nn::random_input(net.input, a.input_seed.value_or(a.seed)));
  std::cerr << "wrote " << net.name << " (" << net.layers.size() << " layers, digest " << std::hex << net.digest() << std::dec
            << ") to " << dir.string() << "\n";
  for (const auto& l : net.layers) std::cout << nn::layer_name(l) << "\n";
  return ok;
}

struct OracleArgs {
  std::string net, input;
};

int cmd_oracle(const OracleArgs& a) {
  const auto net = io::load_network(a.net);
  if (!net.has_weights()) throw std::invalid_argument(a.net + " has no weights; the oracle needs the private network");
  print_scores(nn::infer_ref(net, load_input(a.input, net)));
  return ok;
}

struct ServeArgs {
  std::string net_dir, key, addr, backend;
  std::size_t sessions = 0;
  std::optional<std::uint64_t> seed;
  int scale_bits = 10;
  double clip = 16.0;
};

int cmd_serve(const ServeArgs& a) {
  const auto net = io::load_network(a.net_dir);
  if (!net.has_weights()) throw std::invalid_argument(a.net_dir + " has no weights");
  const auto k = load_role_key(a.key, phe::Owner::server);
  const auto fpp = fixed_point(k.params, a.scale_bits, a.clip);
  proto::build_plan(net, k.params.n);
  const auto ep = net::resolve_endpoint(a.addr);
  net::Server server(ep);
  std::cerr << "serving " << net.name << " on " << ep.host << ":" << server.port() << " (" << a.backend << ")"
            << std::endl;
  std::atomic<std::uint64_t> counter{0};
  std::mutex log_mu;
  const auto base = a.seed.value_or(fresh_seed());
  auto ctx = a.backend == "rlwe" ? std::make_shared<const phe::RlweContext>(k.params) : nullptr;
  server.serve(
      [&](net::SocketChannel& ch) {
        const auto id = counter++;
        const auto blind = base + 2 * id;
        auto run = [&](auto be) {
          using B = decltype(be);
          auto key = k.key;
          if constexpr (std::is_same_v<B, phe::RlweBackend>) be.prepare_key(key);
          proto::ServerSession<B> session(net, fpp, std::move(be), std::move(key), blind);
          return net::serve_session(session, ch);
        };
        net::SessionSummary s;
        if (ctx) {
          s = run(a.seed ? phe::RlweBackend(ctx, blind + 1) : phe::RlweBackend::with_entropy(ctx));
        } else {
          s = run(phe::ClearBackend(k.params));
        }
        phe::OpCounters total;
        for (const auto& st : s.stages) total += st.server;
        std::lock_guard lock(log_mu);
        std::cerr << "session " << id << ": " << (s.ok ? "ok" : "failed: " + s.error) << "; " << bytes_line(s.bytes)
                  << "; server ops mult " << total.mult() << " add " << total.add() << " perm " << total.perm
                  << std::endl;
      },
      a.sessions);
  return ok;
}

struct InferArgs {
  std::string net, key, addr, input, report, backend, oracle;
  std::optional<std::uint64_t> seed;
  int scale_bits = 10;
  double clip = 16.0;
  double tolerance = 1e-2;
};

int cmd_infer(const InferArgs& a) {
  const auto net = io::load_network(a.net).public_view();
  const auto k = load_role_key(a.key, phe::Owner::client);
  const auto fpp = fixed_point(k.params, a.scale_bits, a.clip);
  const auto x = load_input(a.input, net);
  std::optional<nn::NetworkSpec> oracle_net;
  if (!a.oracle.empty()) {
    oracle_net = io::load_network(a.oracle);
    if (!oracle_net->has_weights()) throw std::invalid_argument(a.oracle + " has no weights");
  }
  const auto seed = a.seed.value_or(fresh_seed());
  const auto ep = net::resolve_endpoint(a.addr);

  const auto t0 = std::chrono::steady_clock::now();
  auto [outcome, counters] = with_backend(a.backend, k.params, a.seed ? std::optional(seed + 1) : std::nullopt,
                                          [&](auto be) {
                                            using B = decltype(be);
                                            auto key = k.key;
                                            if constexpr (std::is_same_v<B, phe::RlweBackend>) be.prepare_key(key);
                                            proto::ClientSession<B> client(net, fpp, std::move(be), std::move(key), seed);
                                            auto ch = net::connect(ep);
                                            auto out = client.run(ch, x);
                                            ch.close();
                                            return std::pair(std::move(out), ch.counters());
                                          });
  const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  report::RunReport rep;
  rep.network = net.name;
  rep.backend = a.backend;
  rep.seed = seed;
  rep.layers = outcome.stages;
  rep.offline_up = outcome.totals.offline_up;
  rep.offline_down = outcome.totals.offline_down;
  rep.saturations = outcome.totals.saturations;
  rep.output = outcome.output;
  rep.wall_ms = wall;
  rep.baselines = report::baseline_rows(net, k.params.n);
  if (oracle_net) report::compare_with_oracle(rep, nn::infer_ref(*oracle_net, x));

  print_scores(rep.output);
  std::cerr << "client " << bytes_line(counters) << "\n";
  if (!a.report.empty()) write_text(a.report, report::to_json(rep).dump(2) + "\n");
  if (oracle_net) {
    std::cerr << "oracle: max abs error " << *rep.max_abs_error << ", argmax "
              << (*rep.argmax_agree ? "agrees" : "differs") << "\n";
    if (!(*rep.max_abs_error <= a.tolerance) || !*rep.argmax_agree) {
      throw VerificationFailure("secure result deviates from the plaintext oracle");
    }
  }
  return ok;
}

struct BenchArgs {
  std::string net, backend, report;
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  int scale_bits = 10;
  double clip = 16.0;
  double tolerance = 1e-2;
};

/// Checks that the measured counters agree with the closed-form model. Returns violation descriptions.
std::vector<std::string> check_counts(const nn::NetworkSpec& net, const proto::Plan& plan, const report::RunReport& rep,
                                      std::size_t n) {
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < rep.layers.size(); ++i) {
    const auto& l = rep.layers[i];
    if (l.server.perm != 0 || l.client.perm != 0) bad.push_back("layer " + std::to_string(i) + ": perm != 0");
    if (i >= plan.stages.size()) continue;
    const auto model = cost::costmodel("cheetah", report::cost_input(net, plan.stages[i], n));
    if (static_cast<double>(l.server_linear.mult()) != model.mult || static_cast<double>(l.server_linear.add()) != model.add) {
      bad.push_back("layer " + std::to_string(i) + " (" + l.label + "): linear mult/add " +
                    std::to_string(l.server_linear.mult()) + "/" + std::to_string(l.server_linear.add()) +
                    ", model " + std::to_string(static_cast<long>(model.mult)) + "/" +
                    std::to_string(static_cast<long>(model.add)));
    }
  }
  return bad;
}

int cmd_bench(const BenchArgs& a) {
  const auto net = network_arg(a.net, a.seed);
  if (!net.has_weights()) throw std::invalid_argument(a.net + " has no weights");
  const auto params = phe::PheParams::make();
  const auto fpp = fixed_point(params, a.scale_bits, a.clip);
  const auto plan = proto::build_plan(net, params.n);
  auto ctx = a.backend == "rlwe" ? std::make_shared<const phe::RlweContext>(params) : nullptr;

  json trials = json::array();
  std::vector<report::RunReport> reports;
  std::vector<std::string> violations;
  double worst = 0, wall_sum = 0;
  std::size_t agree = 0;
  for (std::size_t t = 0; t < a.trials; ++t) {
    const std::uint64_t s = a.seed * 1000003 + t;
    const auto x = nn::random_input(net.input, s);
    proto::Seeds seeds{s * 8 + 1, s * 8 + 2, s * 8 + 3, s * 8 + 4, s * 8 + 5, s * 8 + 6};
    const auto t0 = std::chrono::steady_clock::now();
    proto::RunResult r;
    if (ctx) {
      r = proto::run_secure_inference(net, x, phe::RlweBackend(ctx, seeds.client_enc),
                                      phe::RlweBackend(ctx, seeds.server_enc), fpp, seeds);
    } else {
      r = proto::run_secure_inference(net, x, phe::ClearBackend(params), phe::ClearBackend(params), fpp, seeds);
    }
    auto rep = report::from_run(net.name, a.backend, r);
    rep.seed = s;
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rep.baselines = report::baseline_rows(net, params.n);
    report::compare_with_oracle(rep, nn::infer_ref(net, x));
    worst = std::max(worst, *rep.max_abs_error);
    agree += *rep.argmax_agree ? 1 : 0;
    wall_sum += rep.wall_ms;
    for (auto& v : check_counts(net, plan, rep, params.n)) violations.push_back("trial " + std::to_string(t) + ": " + v);
    if (!(*rep.max_abs_error <= a.tolerance)) {
      violations.push_back("trial " + std::to_string(t) + ": max abs error " + std::to_string(*rep.max_abs_error));
    }
    if (!*rep.argmax_agree) violations.push_back("trial " + std::to_string(t) + ": argmax differs from oracle");
    trials.push_back(report::to_json(rep));
    reports.push_back(std::move(rep));
  }

  json doc = {{"format", report::kBenchFormat},
              {"network", net.name},
              {"backend", a.backend},
              {"seed", a.seed},
              {"trials", trials},
              {"summary",
               {{"trials", a.trials},
                {"max_abs_error", worst},
                {"argmax_agreement", a.trials ? static_cast<double>(agree) / static_cast<double>(a.trials) : 1.0},
                {"mean_wall_ms", a.trials ? wall_sum / static_cast<double>(a.trials) : 0.0},
                {"violations", violations}}}};
  if (!a.report.empty()) write_text(a.report, doc.dump(2) + "\n");
  if (!reports.empty()) std::cout << report::render_table(reports.front());
  std::cout << "\n" << a.trials << " trials, max abs error " << worst << ", argmax agreement " << agree << "/" << a.trials
            << ", mean wall " << (a.trials ? wall_sum / static_cast<double>(a.trials) : 0.0) << " ms\n";
  for (const auto& v : violations) std::cout << "VIOLATION " << v << "\n";
  if (!violations.empty()) throw VerificationFailure(std::to_string(violations.size()) + " violation(s)");
  std::cout << "all op-count and accuracy checks passed\n";
  return ok;
}

struct CostArgs {
  std::string layer = "fc", scheme = "all", format = "table";
  cost::CostInput in;
  std::size_t c_n = 0;
};

int cmd_costmodel(CostArgs a) {
  a.in.layer = cost::layer_kind_from_string(a.layer);
  if (a.c_n) a.in.c_n = a.c_n;
  std::vector<cost::CostRow> rows;
  if (a.scheme == "all") {
    for (const auto& s : cost::schemes_for(a.in.layer)) rows.push_back(cost::costmodel(s, a.in));
  } else {
    rows.push_back(cost::costmodel(a.scheme, a.in));
  }
  if (a.format == "json") {
    json j = json::array();
    for (const auto& r : rows) j.push_back(report::to_json(r));
    std::cout << j.dump(2) << "\n";
    return ok;
  }
  const bool csv = a.format == "csv";
  if (csv) std::cout << "scheme,layer,perm,mult,add,comm_bits,comm_kib\n";
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    auto num = [](double v) { return report::detail::fmt(v, 0); };
    const std::string bits = r.comm_bits ? num(*r.comm_bits) : "";
    const std::string kib = r.comm_bits ? report::detail::fmt(*r.comm_kib(), 1) : "";
    if (csv) {
      std::cout << r.scheme << "," << cost::to_string(r.layer) << "," << num(r.perm) << "," << num(r.mult) << ","
                << num(r.add) << "," << bits << "," << kib << "\n";
    } else {
      cells.push_back({r.scheme, num(r.perm), num(r.mult), num(r.add), bits.empty() ? "-" : bits, kib.empty() ? "-" : kib});
    }
  }
  if (!csv) std::cout << report::detail::render_grid({"scheme", "#Perm", "#Mult", "#Add", "comm bits", "comm KiB"}, cells);
  return ok;
}

struct ReportArgs {
  std::string in, format = "table";
};

int cmd_report(const ReportArgs& a) {
  const auto reports = report::reports_from_document(read_json(a.in));
  if (a.format == "csv") {
    std::cout << report::render_csv(reports);
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i) std::cout << (i ? "\n" : "") << report::render_table(reports[i]);
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perm-free secure inference with packed homomorphic encryption and additive sharing"};
  app.require_subcommand(1);
  std::function<int()> action;

  KeygenArgs kg;
  auto* keygen = app.add_subcommand("keygen", "Generate a secret key file");
  keygen->add_option("--params", kg.params_file, "Parameter JSON ({n, p_bits, q_bits} or {n, p, q, sigma})");
  keygen->add_option("--role", kg.role, "Key owner")->check(CLI::IsMember({"client", "server"}));
  keygen->add_option("--seed", kg.seed, "Key seed");
  keygen->add_option("--out", kg.out, "Output file")->required();
  keygen->callback([&] { action = [&] { return cmd_keygen(kg); }; });

  MakeNetArgs mn;
  auto* make_net = app.add_subcommand("make-net", "Write a random-weight network, its public manifest and a sample input");
  make_net->add_option("--template", mn.templ, "Network template")
      ->required()
      ->check(CLI::IsMember({"tiny", "netA", "netB", "vgghead"}));
  make_net->add_option("--seed", mn.seed, "Weight seed");
  make_net->add_option("--input-seed", mn.input_seed, "Seed of input.chtw (defaults to --seed)");
  make_net->add_option("--out-dir", mn.out_dir, "Output directory")->required();
  make_net->callback([&] { action = [&] { return cmd_make_net(mn); }; });

  OracleArgs orc;
  auto* oracle = app.add_subcommand("oracle", "Plaintext reference inference");
  oracle->add_option("--net", orc.net, "Network directory or manifest with weights")->required();
  oracle->add_option("--input", orc.input, "Input tensor file")->required();
  oracle->callback([&] { action = [&] { return cmd_oracle(orc); }; });

  ServeArgs sv;
  sv.backend = default_backend();
  auto* serve = app.add_subcommand("serve", "Run the server party");
  serve->add_option("--net-dir", sv.net_dir, "Network directory with weights")->required();
  serve->add_option("--key", sv.key, "Server key file")->required();
  serve->add_option("--addr", sv.addr, "Listen address host:port (default CHEETAH_ADDR or 127.0.0.1:7462)");
  serve->add_option("--backend", sv.backend, "clear or rlwe (default CHEETAH_BACKEND or rlwe)");
  serve->add_option("--sessions", sv.sessions, "Exit after this many sessions (0 = run forever)");
  serve->add_option("--seed", sv.seed, "Blinding seed (default: random)");
  serve->add_option("--scale-bits", sv.scale_bits, "Fixed-point fraction bits");
  serve->callback([&] { action = [&] { checked_backend(sv.backend); return cmd_serve(sv); }; });

  InferArgs inf;
  inf.backend = default_backend();
  auto* infer = app.add_subcommand("infer", "Run the client party");
  infer->add_option("--net,--net-manifest-public", inf.net, "Public network manifest")->required();
  infer->add_option("--key", inf.key, "Client key file")->required();
  infer->add_option("--addr", inf.addr, "Server address host:port (default CHEETAH_ADDR or 127.0.0.1:7462)");
  infer->add_option("--input", inf.input, "Input tensor file")->required();
  infer->add_option("--report", inf.report, "Write a run report here");
  infer->add_option("--backend", inf.backend, "clear or rlwe (default CHEETAH_BACKEND or rlwe)");
  infer->add_option("--oracle", inf.oracle, "Network with weights to compare against (adds error fields)");
  infer->add_option("--tolerance", inf.tolerance, "Max abs error accepted with --oracle");
  infer->add_option("--seed", inf.seed, "Client randomness seed (default: random)");
  infer->add_option("--scale-bits", inf.scale_bits, "Fixed-point fraction bits");
  infer->callback([&] { action = [&] { return cmd_infer(inf); }; });

  BenchArgs bn;
  bn.backend = default_backend();
  auto* bench = app.add_subcommand("bench", "Repeated in-process inference with op-count and accuracy checks");
  bench->add_option("--net", bn.net, "Network directory, manifest, or template name")->required();
  bench->add_option("--trials", bn.trials, "Number of random inputs");
  bench->add_option("--backend", bn.backend, "clear or rlwe (default CHEETAH_BACKEND or rlwe)");
  bench->add_option("--report", bn.report, "Write the bench document here");
  bench->add_option("--seed", bn.seed, "Base seed for weights (templates), inputs and blinding");
  bench->add_option("--tolerance", bn.tolerance, "Max abs error per trial");
  bench->add_option("--scale-bits", bn.scale_bits, "Fixed-point fraction bits");
  bench->callback([&] { action = [&] { checked_backend(bn.backend); return cmd_bench(bn); }; });

  CostArgs cm;
  auto* costmodel = app.add_subcommand("costmodel", "Closed-form Perm/Mult/Add and communication per scheme");
  costmodel->add_option("--layer", cm.layer, "siso, mimo or fc")->check(CLI::IsMember({"siso", "mimo", "fc"}));
  costmodel->add_option("--scheme", cm.scheme, "Scheme or 'all'");
  costmodel->add_option("--n", cm.in.n, "Slots per ciphertext");
  costmodel->add_option("--log-q", cm.in.log_q, "Ciphertext modulus bits");
  costmodel->add_option("--log-p", cm.in.log_p, "Plaintext modulus bits");
  costmodel->add_option("--n-i", cm.in.n_i, "FC input size");
  costmodel->add_option("--n-o", cm.in.n_o, "FC output size");
  costmodel->add_option("--r", cm.in.r, "Kernel side");
  costmodel->add_option("--c-i", cm.in.c_i, "Input channels");
  costmodel->add_option("--c-o", cm.in.c_o, "Output channels");
  costmodel->add_option("--c-n", cm.c_n, "Channels per ciphertext (default: from the layout)");
  costmodel->add_option("--in", cm.in.in, "Input side I");
  costmodel->add_option("--stride", cm.in.stride, "Conv stride");
  costmodel->add_flag("--with-activation", cm.in.with_activation, "Include the ReLU step in CHEETAH counts");
  costmodel->add_option("--format", cm.format, "table, csv or json")->check(CLI::IsMember({"table", "csv", "json"}));
  costmodel->callback([&] { action = [&] { return cmd_costmodel(cm); }; });

  ReportArgs rp;
  auto* rep = app.add_subcommand("report", "Render a run report or bench document");
  rep->add_option("--in", rp.in, "Report JSON")->required();
  rep->add_option("--format", rp.format, "table or csv")->check(CLI::IsMember({"table", "csv"}));
  rep->callback([&] { action = [&] { return cmd_report(rp); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  }

  try {
    return action();
  } catch (const VerificationFailure& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return verification;
  } catch (const wire::ProtocolError& e) {
    std::cerr << "protocol error (code " << static_cast<int>(e.code()) << "): " << e.what() << "\n";
    return protocol;
  } catch (const net::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return protocol;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  }
}

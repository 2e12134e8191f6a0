// Desk-scale acceptance run: one PASS/FAIL line per criterion.
// Usage: acceptance [--config configs/desk-scale.json] [--seeds 3]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "expertmatch/error.hpp"
#include "expertmatch/evaluate.hpp"
#include "expertmatch/matcher.hpp"
#include "expertmatch/nn/loss.hpp"
#include "expertmatch/service.hpp"
#include "support.hpp"

using namespace em;
using namespace em::nn;
using em::test::numeric_partial;
using em::test::random_matrix;
using em::test::rel_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void log(const std::string& msg) {
  static const auto start = std::chrono::steady_clock::now();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "[%6.1fs] %s\n", s, msg.c_str());
}

double probe(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * w.values()[i];
  return s;
}

// ---- shared experiment state ------------------------------------------------

struct Context {
  ExperimentConfig config;
  ExperimentReport report;
  std::vector<DatasetSplit> splits;  // unstandardized, pooled to 784
  std::filesystem::path work;
};

// ---- criteria -----------------------------------------------------------------

Outcome coarse_mnist(const Context& c) {
  const AccuracyCell* a = c.report.coarse.find("mnist", "A");
  const AccuracyCell* b = c.report.coarse.find("mnist", "B");
  if (!a || !b) return {false, "no mnist rows"};
  const bool ok = a->accuracy() >= 99.5 && b->accuracy() >= 99.5 && c.report.registry.size() == 4 &&
                  c.report.registry.at(0).fingerprint.samples == 5000;
  return {ok, "MNIST CA A=" + fmt("%.2f", a->accuracy()) + "% B=" + fmt("%.2f", b->accuracy()) + "% (>= 99.5, K=" +
                  std::to_string(c.report.registry.size()) + ")"};
}

Outcome coarse_average(const Context& c) {
  const double a = c.report.coarse.client_average("A"), b = c.report.coarse.client_average("B");
  return {a >= 99.0 && b >= 99.0, "mean CA A=" + fmt("%.2f", a) + "% B=" + fmt("%.2f", b) + "% (>= 99.0)"};
}

Outcome mlp_parity(const Context& c) {
  if (!c.report.mlp) return {false, "MLP baseline not run"};
  bool ok = true;
  std::string detail;
  for (const char* client : {"A", "B"}) {
    const double ae = c.report.coarse.client_average(client), mlp = c.report.mlp->client_average(client);
    ok = ok && mlp >= 99.0 && std::abs(ae - mlp) <= 1.0;
    detail += std::string(client) + ": AE=" + fmt("%.2f", ae) + " MLP=" + fmt("%.2f", mlp) + " ";
  }
  return {ok, detail + "(MLP >= 99.0, gap <= 1.0)"};
}

Outcome fine_mnist(const Context& c, int seeds) {
  std::size_t mnist = 0;
  while (mnist < c.config.datasets.size() && c.config.datasets[mnist].name != "mnist") ++mnist;
  if (mnist == c.config.datasets.size()) return {false, "no mnist dataset"};
  const DatasetSplit& split = c.splits[mnist];
  bool ok = true;
  std::string detail;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = c.config.train.seed + static_cast<std::uint64_t>(s);
    double fa_a = 0.0, fa_b = 0.0;
    if (s == 0) {
      fa_a = c.report.fine.find("mnist", "A")->accuracy();
      fa_b = c.report.fine.find("mnist", "B")->accuracy();
    } else {
      log("criterion 4: training MNIST autoencoder with seed " + std::to_string(seed));
      TrainConfig tc = c.config.train;
      tc.seed = seed;
      ExpertEntry e;
      e.expert_id = "mnist";
      e.autoencoder = train_autoencoder(split.server.samples, tc, ActivationKind::kSigmoid);
      e.centroids = compute_centroids(e.autoencoder, split.server.samples, 10);
      fa_a = eval_fine(e, split.client_a.samples).accuracy();
      fa_b = eval_fine(e, split.client_b.samples).accuracy();
    }
    for (double v : {fa_a, fa_b}) ok = ok && v >= 74.0 && v <= 92.0;
    detail += "seed " + std::to_string(seed) + ": " + fmt("%.2f", fa_a) + "/" + fmt("%.2f", fa_b) + "  ";
  }
  return {ok, detail + "(in [74, 92])"};
}

Outcome gradients() {
  double dense = 0, bn = 0, act = 0, mse = 0, ce = 0, net = 0;
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(4), in = 1 + rng.below(5), out = 1 + rng.below(4);
    DenseLayer layer(random_matrix(out, in, rng), random_matrix(1, out, rng));
    Matrix x = random_matrix(n, in, rng);
    const Matrix w = random_matrix(n, out, rng);
    const auto f = [&] { return probe(layer.infer(x), w); };
    layer.zero_grad();
    layer.forward(x);
    const Matrix gx = layer.backward(w);
    for (std::size_t i = 0; i < x.size(); ++i) dense = std::max(dense, rel_error(gx.values()[i], numeric_partial(x, i, f)));
    for (std::size_t i = 0; i < layer.weights().size(); ++i)
      dense = std::max(dense, rel_error(layer.weight_grad().values()[i], numeric_partial(layer.weights(), i, f)));
    for (std::size_t i = 0; i < layer.bias().size(); ++i)
      dense = std::max(dense, rel_error(layer.bias_grad().values()[i], numeric_partial(layer.bias(), i, f)));
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(5), f = 1 + rng.below(4);
    BatchNorm1d layer(f);
    layer.gamma() = random_matrix(1, f, rng);
    layer.beta() = random_matrix(1, f, rng);
    if (t % 2) {
      std::vector<double> mean(f), var(f);
      for (std::size_t i = 0; i < f; ++i) {
        mean[i] = rng.normal();
        var[i] = rng.uniform(0.2, 2.0);
      }
      layer.restore(layer.gamma(), layer.beta(), mean, var, 0.1, 1e-5);
      layer.set_mode(Mode::kEval);
    }
    Matrix x = random_matrix(n, f, rng, 2.0);
    const Matrix w = random_matrix(n, f, rng);
    const auto fn = [&] {
      BatchNorm1d copy = layer;
      return probe(copy.forward(x), w);
    };
    BatchNorm1d work = layer;
    work.zero_grad();
    work.forward(x);
    const Matrix gx = work.backward(w);
    for (std::size_t i = 0; i < x.size(); ++i) bn = std::max(bn, rel_error(gx.values()[i], numeric_partial(x, i, fn)));
    for (std::size_t i = 0; i < f; ++i) {
      bn = std::max(bn, rel_error(work.gamma_grad().values()[i], numeric_partial(layer.gamma(), i, fn)));
      bn = std::max(bn, rel_error(work.beta_grad().values()[i], numeric_partial(layer.beta(), i, fn)));
    }
  }
  for (auto kind : {ActivationKind::kRelu, ActivationKind::kSigmoid, ActivationKind::kIdentity}) {
    for (int t = 0; t < 100; ++t) {
      Activation a(kind);
      const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(5);
      Matrix x = random_matrix(n, d, rng, 2.0);
      for (double& v : x.values())
        if (std::abs(v) < 1e-3) v = 0.5;
      const Matrix w = random_matrix(n, d, rng);
      a.forward(x);
      const Matrix g = a.backward(w);
      const auto f = [&] { return probe(a.infer(x), w); };
      for (std::size_t i = 0; i < x.size(); ++i) act = std::max(act, rel_error(g.values()[i], numeric_partial(x, i, f)));
    }
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(4), c = 2 + rng.below(4);
    Matrix p = random_matrix(n, c, rng, 2.0);
    const Matrix q = random_matrix(n, c, rng);
    const LossResult r = mse_loss(p, q);
    for (std::size_t i = 0; i < p.size(); ++i)
      mse = std::max(mse, rel_error(r.grad.values()[i], numeric_partial(p, i, [&] { return mse_loss(p, q).loss; })));
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(c));
    const LossResult s = softmax_cross_entropy(p, y);
    for (std::size_t i = 0; i < p.size(); ++i)
      ce = std::max(ce, rel_error(s.grad.values()[i], numeric_partial(p, i, [&] { return softmax_cross_entropy(p, y).loss; })));
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(4), in = 1 + rng.below(4), hid = 1 + rng.below(4), out = 1 + rng.below(3);
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer(random_matrix(hid, in, rng), random_matrix(1, hid, rng)));
    layers.emplace_back(BatchNorm1d(hid));
    layers.emplace_back(Activation(t % 2 ? ActivationKind::kSigmoid : ActivationKind::kIdentity));
    layers.emplace_back(DenseLayer(random_matrix(out, hid, rng), random_matrix(1, out, rng)));
    Network model(std::move(layers));
    model.set_mode(Mode::kTrain);
    Matrix x = random_matrix(n, in, rng);
    const Matrix target = random_matrix(n, out, rng);
    const auto f = [&] {
      Network copy = model;
      return mse_loss(copy.forward(x), target).loss;
    };
    Network work = model;
    work.zero_grad();
    const Matrix gx = work.backward(mse_loss(work.forward(x), target).grad);
    for (std::size_t i = 0; i < x.size(); ++i) net = std::max(net, rel_error(gx.values()[i], numeric_partial(x, i, f)));
    auto analytic = work.parameters();
    auto numeric = model.parameters();
    for (std::size_t p = 0; p < numeric.size(); ++p)
      for (std::size_t i = 0; i < numeric[p].value->size(); ++i)
        net = std::max(net, rel_error(analytic[p].grad->values()[i], numeric_partial(*numeric[p].value, i, f)));
  }
  const double worst = std::max({dense, bn, act, mse, ce, net});
  char buf[256];
  std::snprintf(buf, sizeof buf, "max rel error dense=%.1e bn=%.1e act=%.1e mse=%.1e ce=%.1e net=%.1e (< 1e-4)", dense,
                bn, act, mse, ce, net);
  return {worst < 1e-4, buf};
}

Outcome invariances() {
  Rng rng(6);
  std::size_t failures = 0, checks = 0;
  const auto expect = [&](bool ok) {
    ++checks;
    if (!ok) ++failures;
  };
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.below(8);
    std::vector<double> losses(k), scaled(k), shifted(k);
    for (double& l : losses) l = rng.uniform(0.0, 1.0);
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    for (std::size_t i = 0; i < k; ++i) {
      scaled[i] = a * losses[i];
      shifted[i] = losses[i] + b;
    }
    expect(argmin_first(scaled) == argmin_first(losses));
    expect(argmin_first(shifted) == argmin_first(losses));
  }

  ClassCentroids spread;
  for (int k = 0; k < 8; ++k) {
    std::vector<double> mu(kHiddenDim);
    for (double& v : mu) v = rng.uniform(0.0, 1.0);
    spread.class_ids.push_back(k);
    spread.centroids.push_back(std::move(mu));
    spread.counts.push_back(1);
  }
  for (int t = 0; t < 500; ++t) {
    std::vector<double> h(kHiddenDim);
    for (double& v : h) v = rng.uniform(0.0, 1.0);
    const int base = fine_match_encoded(spread, h).fine_class;
    const double s = rng.uniform(0.01, 100.0);
    for (double& v : h) v *= s;
    expect(fine_match_encoded(spread, h).fine_class == base);
  }

  for (std::size_t k = 1; k <= 6; ++k) {
    Registry r;
    for (std::size_t i = 0; i < k; ++i) r.add(test::make_entry("e" + std::to_string(i), 100 * k + i, i % 2 == 0));
    for (int t = 0; t < 30; ++t) {
      const Sample x = test::random_sample(rng, -1, 2);
      const MatchResult m = coarse_match(r, x);
      std::size_t best = 0;
      double best_loss = r.at(0).autoencoder.reconstruction_loss(x);
      for (std::size_t i = 1; i < k; ++i) {
        const double l = r.at(i).autoencoder.reconstruction_loss(x);
        if (l < best_loss) {
          best_loss = l;
          best = i;
        }
      }
      expect(m.coarse_index == best);
    }
  }

  Registry tied;
  ExpertEntry e = test::make_entry("first", 1);
  tied.add(e);
  e.expert_id = "copy";
  tied.add(e);
  for (int t = 0; t < 50; ++t) expect(coarse_match(tied, test::random_sample(rng)).coarse_index == 0);
  expect(argmin_first(std::vector<double>{3, 1, 1}) == 1);

  return {failures == 0, std::to_string(checks - failures) + "/" + std::to_string(checks) +
                             " argmin, cosine-scale, brute-force (K <= 6) and tie-break checks"};
}

// Replay requests built from client samples of every dataset.
std::vector<service::MatchRequest> replay_requests(const Context& c, std::size_t count) {
  std::vector<service::MatchRequest> out;
  const service::Resolution modes[] = {service::Resolution::kHierarchical, service::Resolution::kCoarse,
                                       service::Resolution::kFine};
  for (std::size_t i = 0; out.size() < count; ++i) {
    const std::size_t d = i % c.splits.size();
    const DatasetSplit& s = c.splits[d];
    const Dataset& client = (i / c.splits.size()) % 2 ? s.client_b : s.client_a;
    service::MatchRequest q;
    q.sample = client.samples[(i / 2) % client.size()];
    if (c.config.datasets[d].standardize) q.standardize_with = c.config.datasets[d].name;
    q.resolution = modes[i % 3];
    if (i % 5 == 0) q.top_k = 1 + i % c.report.registry.size();
    out.push_back(std::move(q));
  }
  return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_discrete(const service::MatchResponse& a, const service::MatchResponse& b) {
  return a.expert_id == b.expert_id && a.coarse_index == b.coarse_index && a.ranking == b.ranking &&
         a.ranking_ids == b.ranking_ids && a.fine_expert_id == b.fine_expert_id && a.fine_class == b.fine_class &&
         a.fine_class_ids == b.fine_class_ids;
}

struct Running {
  service::Server server;
  std::thread thread;
  std::string url;
  explicit Running(service::ServerConfig cfg) : server(std::move(cfg)) {
    url = "127.0.0.1:" + std::to_string(server.bind());
    thread = std::thread([this] { server.run(); });
    for (int i = 0; i < 400 && service::http_call(url, "GET", "/v1/health").status != 200; ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~Running() {
    server.stop();
    thread.join();
  }
};

Outcome persistence(const Context& c) {
  const Registry& reg = c.report.registry;
  const auto path = c.work / "registry.bin";
  save_registry(reg, path);
  const auto bytes = read_file_bytes(path);
  const Registry loaded = load_registry(path);
  const bool bit_exact = loaded == reg && serialize_registry(loaded) == bytes;

  const auto requests = replay_requests(c, 1000);
  service::ServerConfig cfg;
  cfg.port = 0;
  cfg.registry_path = path;
  std::vector<service::MatchResponse> first;
  double worst = 0.0;
  std::size_t mismatched = 0, http_errors = 0;
  {
    Running live(cfg);
    for (const auto& q : requests) {
      const service::HttpReply r = service::http_call(live.url, "POST", "/v1/match", service::request_to_wire(q));
      if (r.status != 200) {
        ++http_errors;
        first.emplace_back();
        continue;
      }
      const service::MatchResponse remote = service::response_from_wire(r.body);
      const service::MatchResponse local = service::execute_match(reg, q);
      worst = std::max({worst, max_diff(remote.losses, local.losses), max_diff(remote.fine_scores, local.fine_scores)});
      if (!same_discrete(remote, local)) ++mismatched;
      first.push_back(remote);
    }
  }
  std::size_t replay_diffs = 0;
  {
    Running again(cfg);
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const service::HttpReply r =
          service::http_call(again.url, "POST", "/v1/match", service::request_to_wire(requests[i]));
      if (r.status != 200 || !service::response_from_wire(r.body).same_outcome(first[i])) ++replay_diffs;
    }
  }
  const bool ok = bit_exact && worst <= 1e-12 && mismatched == 0 && http_errors == 0 && replay_diffs == 0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "save/load %s (%zu bytes); %zu requests: max |diff|=%.1e, %zu mismatched, %zu errors; restart replay "
                "diffs=%zu",
                bit_exact ? "bit-exact" : "DIFFERS", bytes.size(), requests.size(), worst, mismatched, http_errors,
                replay_diffs);
  return {ok, buf};
}

Outcome splits(const Context& c) {
  const std::pair<std::size_t, std::array<std::size_t, 3>> rows[] = {{10000, {5000, 2500, 2500}},
                                                                     {3540, {1770, 885, 885}}};
  bool ok = true;
  for (const auto& [n, sizes] : rows) {
    for (std::uint64_t seed : {0u, 7u, 12345u}) {
      SplitSpec spec;
      spec.seed = seed;
      const SplitIndices s = split_indices(n, spec);
      ok = ok && s.server.size() == sizes[0] && s.client_a.size() == sizes[1] && s.client_b.size() == sizes[2];
      std::vector<std::size_t> all = s.server;
      all.insert(all.end(), s.client_a.begin(), s.client_a.end());
      all.insert(all.end(), s.client_b.begin(), s.client_b.end());
      std::sort(all.begin(), all.end());
      for (std::size_t i = 0; i < n; ++i) ok = ok && all[i] == i;
      const SplitIndices again = split_indices(n, spec);
      ok = ok && again.server == s.server && again.client_a == s.client_a && again.client_b == s.client_b;
    }
  }
  const auto& sz = c.report.split_sizes;
  const bool mnist = sz.count("mnist/server") && sz.at("mnist/server") == 5000 && sz.at("mnist/client_a") == 2500 &&
                     sz.at("mnist/client_b") == 2500;
  return {ok && mnist, "10000 -> 5000/2500/2500 and 3540 -> 1770/885/885 exact, disjoint, exhaustive, reproducible"};
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path config_path = test::source_root() / "configs" / "desk-scale.json";
  int seeds = 3;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--config") config_path = argv[i + 1];
    else if (flag == "--seeds") seeds = std::max(1, std::atoi(argv[i + 1]));
  }

  Context c;
  try {
    std::ifstream in(config_path);
    if (!in) fail(ErrorCode::kIo, "cannot read " + config_path.string());
    std::stringstream text;
    text << in.rdbuf();
    c.config = parse_experiment_config(text.str());
    for (auto& d : c.config.datasets) {
      for (std::string* p : {&d.images_path, &d.labels_path, &d.csv_path}) {
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (config_path.parent_path() / *p).string();
      }
    }
    c.work = test::temp_dir("acceptance");
    log("running the split / train / evaluate protocol");
    c.report = run_experiment(c.config, [](const char* m, void*) { log(m); }, nullptr);
    std::cerr << c.report.text();
    for (const auto& d : c.config.datasets) c.splits.push_back(split_dataset(load_dataset(d), c.config.split));
  } catch (const std::exception& e) {
    std::printf("FAIL setup: %s\n", e.what());
    return 1;
  }

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"1 coarse assignment, MNIST", [&] { return coarse_mnist(c); }},
      {"2 coarse assignment, 4-way average", [&] { return coarse_average(c); }},
      {"3 autoencoder vs MLP parity", [&] { return mlp_parity(c); }},
      {"4 fine assignment, MNIST", [&] { return fine_mnist(c, seeds); }},
      {"5 gradient checks", [] { return gradients(); }},
      {"6 matching invariances", [] { return invariances(); }},
      {"7 persistence and wire fidelity", [&] { return persistence(c); }},
      {"8 split protocol", [&] { return splits(c); }},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed ? 1 : 0;
}

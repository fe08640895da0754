// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: tthlab_acceptance <scratch dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "tthlab/attack.hpp"
#include "tthlab/commands.hpp"
#include "tthlab/gradcheck.hpp"
#include "tthlab/report_io.hpp"
#include "tthlab/retrieval.hpp"
#include "tthlab/rng.hpp"

using namespace tth;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradProbes = 10;
constexpr double kGradSeconds = 60.0;
constexpr int kMaskTriples = 100;
constexpr int kRetrievalInstances = 50;
constexpr double kCleanR10Min = 80.0;
constexpr double kPipelineSeconds = 600.0;
constexpr double kCleanTrojanMax = 5.0;
constexpr double kAttackedTrojanMin = 80.0;
constexpr double kRelevantDropMin = 10.0;
constexpr double kAttackSeconds = 1800.0;
constexpr double kScannableLambda = 0.3;
constexpr double kMcsTol = 1e-12;
constexpr double kSpearmanFail = -0.1;

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Image random_image(ImageShape shape, Rng& rng, double lo = 0.0, double hi = 255.0) {
  Image img(shape);
  for (double& v : img.pixels()) v = rng.uniform(lo, hi);
  return img;
}

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::size_t probes = 0;
  for (Arch arch : {Arch::A, Arch::B}) {
    for (std::size_t p = 0; p < kGradProbes; ++p) {
      MatcherHyper h;
      h.arch = arch;
      h.d = 8;
      h.d_e = 8;
      h.hidden = 6;
      h.pool_factor = 2;
      h.seed = 1000 + p;
      const MatcherModel m = init_matcher(h, Vocabulary::standard().size(), {8, 8, 3});
      std::vector<Image> benign;
      for (int i = 0; i < 3; ++i) benign.push_back(random_image(m.input, rng));
      PatchState ps;
      ps.mask = MaskSpec{m.input, 0.25, Placement::Offset, rng.below(5), rng.below(5)};
      ps.delta_o = random_image({4, 4, 3}, rng);
      ps.delta = random_image({4, 4, 3}, rng, 20.0, 235.0);
      ps.lambda = rng.uniform(0.0, 2.0);
      std::vector<double> ew(m.d);
      for (double& x : ew) x = rng.normal();
      const Embedding e_w{l2_normalize(ew)};
      const Image analytic = patch_gradient(m, benign, ps, e_w);
      const ScalarFunction f = [&](const Tensor& t) {
        PatchState q = ps;
        q.delta = Image::from_tensor(t);
        return combined_loss(m, benign, q, e_w).total;
      };
      const auto rep = grad_check(analytic.to_tensor(), finite_diff_grad(f, ps.delta.to_tensor(), kGradStep), kGradRelTol);
      worst = std::max(worst, rep.max_rel_error);
      ++probes;
    }
  }
  const double secs = seconds_since(start);
  verdict(1, worst < kGradRelTol && secs < kGradSeconds, "patch gradient vs central differences",
          std::to_string(probes) + " probes, max rel err " + fmt("%.3g", worst) + ", " + fmt("%.2f s", secs));
}

void criterion_masking() {
  Rng rng(102);
  const Placement places[] = {Placement::TopRight, Placement::TopLeft, Placement::BottomRight,
                              Placement::BottomLeft, Placement::Offset};
  int exact = 0;
  for (int trial = 0; trial < kMaskTriples; ++trial) {
    const std::size_t size = 32 + 16 * rng.below(3);
    MaskSpec m{{size, size, 3}, rng.uniform(0.02, 0.5), places[rng.below(5)]};
    const std::size_t side = m.side();
    m.offset_y = rng.below(size - side + 1);
    m.offset_x = rng.below(size - side + 1);
    const Image benign = random_image(m.image, rng);
    const Image delta = random_image({side, side, 3}, rng);
    const Image out = apply_patch(benign, delta, m);
    const PixelRect r = m.rect();
    bool ok = true;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double want = r.contains(y, x) ? delta.at(y - r.y, x - r.x, c) : benign.at(y, x, c);
          ok = ok && out.at(y, x, c) == want;
        }
      }
    }
    exact += ok;
  }
  verdict(2, exact == kMaskTriples, "masking exactness", std::to_string(exact) + "/" + std::to_string(kMaskTriples) + " triples exact");
}

void criterion_retrieval_oracle() {
  Rng rng(103);
  int agree = 0;
  for (int trial = 0; trial < kRetrievalInstances; ++trial) {
    const std::size_t n = 1 + rng.below(20), d = 4, nq = 1 + rng.below(10), k = 1 + rng.below(12);
    RetrievalIndex index;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(d);
      for (double& x : v) x = rng.normal();
      if (i % 4 == 3) v = index.entries[rng.below(i)].embedding.vec;  // ties
      index.entries.push_back({static_cast<ImageId>(n - i), Embedding{l2_normalize(v)}, Origin::Corpus});
    }
    std::vector<std::vector<ImageId>> rankings, naive_rankings, relevant;
    bool ok = true;
    for (std::size_t q = 0; q < nq; ++q) {
      std::vector<double> v(d);
      for (double& x : v) x = rng.normal();
      const Embedding e{l2_normalize(v)};
      // Naive: repeated selection of the best remaining (highest score, lowest id).
      std::vector<bool> taken(n, false);
      std::vector<ImageId> naive;
      for (std::size_t r = 0; r < std::min(k, n); ++r) {
        std::size_t best = n;
        double best_s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += e.vec[j] * index.entries[i].embedding.vec[j];
          if (best == n || s > best_s || (s == best_s && index.entries[i].id < index.entries[best].id)) {
            best = i;
            best_s = s;
          }
        }
        taken[best] = true;
        naive.push_back(index.entries[best].id);
      }
      std::vector<ImageId> got;
      for (const auto& s : query_topk(index, e, k)) got.push_back(s.id);
      ok = ok && got == naive;
      rankings.push_back(got);
      naive_rankings.push_back(naive);
      relevant.push_back({static_cast<ImageId>(1 + rng.below(n))});
    }
    std::size_t hits = 0;
    for (std::size_t q = 0; q < nq; ++q) {
      hits += std::find(naive_rankings[q].begin(), naive_rankings[q].end(), relevant[q][0]) != naive_rankings[q].end();
    }
    const double naive_recall = 100.0 * static_cast<double>(hits) / static_cast<double>(nq);
    ok = ok && recall_at_k(rankings, relevant, k) == naive_recall;
    agree += ok;
  }
  verdict(3, agree == kRetrievalInstances, "retrieval vs brute-force oracle",
          std::to_string(agree) + "/" + std::to_string(kRetrievalInstances) + " instances agree");
}

const EvalReport* find_report(const MatrixResult& mr, AttackMode mode, const std::string& eval_net,
                              const std::string& attack_net, const std::string& corpus) {
  for (const auto& r : mr.reports) {
    if (r.setup.mode == mode && r.setup.eval_net == eval_net && r.setup.attack_net == attack_net &&
        r.setup.train_corpus == corpus) {
      return &r;
    }
  }
  return nullptr;
}

void criterion_clean_quality(const PipelineResult& p) {
  const World& w = p.lab.world(Flavor::Blobs);
  const double r10 = split_recall(w.model(Arch::A).model, w.corpus, Split::Test, 10);
  double secs = p.corpus_seconds;
  for (const auto& [tag, s] : p.train_seconds) secs += s;
  verdict(4, r10 >= kCleanR10Min && secs < kPipelineSeconds, "clean matcher quality",
          "A@blobs test R10 " + fmt("%.1f", r10) + ", corpus+train " + fmt("%.0f s", secs));
}

void criterion_white_box(const PipelineResult& p) {
  const EvalReport* r = find_report(p.matrix, AttackMode::WhiteBox, "A@blobs", "A@blobs", "blobs");
  if (!r) return verdict(5, false, "white-box attack", "no A@blobs white-box report");
  const EvalRow& m = r->mean_row;
  const double drop = m.relevant_r10_clean - m.relevant_r10_tth;
  const double secs = p.matrix.attack_seconds.at(family_tag("A@blobs", Flavor::Blobs));
  const bool pass = m.trojan_r10_clean < kCleanTrojanMax && m.trojan_r10_tth >= kAttackedTrojanMin &&
                    drop >= kRelevantDropMin && r->rows.size() == 24 && secs < kAttackSeconds;
  verdict(5, pass, "white-box attack effect",
          "trojan R10 " + fmt("%.1f", m.trojan_r10_clean) + " -> " + fmt("%.1f", m.trojan_r10_tth) +
              ", relevant R10 " + fmt("%.1f", m.relevant_r10_clean) + " -> " + fmt("%.1f", m.relevant_r10_tth) +
              ", " + std::to_string(r->rows.size()) + " keywords in " + fmt("%.0f s", secs));
}

void criterion_lambda(const PipelineResult& p) {
  std::set<std::size_t> seeds;
  for (const auto& pt : p.lambda_sweep) seeds.insert(pt.seed_index);
  std::size_t scannable_votes = 0, accuracy_votes = 0;
  std::ostringstream detail;
  for (std::size_t s : seeds) {
    bool scannable = true;
    double acc0 = -1.0, acc10 = -1.0;
    for (const auto& pt : p.lambda_sweep) {
      if (pt.seed_index != s) continue;
      if (pt.lambda >= kScannableLambda) scannable = scannable && pt.scannable;
      if (pt.lambda == 0.0) acc0 = pt.cell_accuracy;
      if (pt.lambda == 10.0) acc10 = pt.cell_accuracy;
      detail << " s" << s << "/l" << pt.lambda << ":" << fmt("%.0f%%", 100.0 * pt.scannable_fraction);
    }
    scannable_votes += scannable;
    accuracy_votes += acc0 >= 0.0 && acc10 >= 0.0 && acc10 > acc0;
  }
  const std::size_t majority = seeds.size() / 2 + 1;
  const bool pass = seeds.size() >= 3 && scannable_votes >= majority && accuracy_votes >= majority;
  verdict(6, pass, "usability tradeoff",
          "scannable for lambda>=0.3 in " + std::to_string(scannable_votes) + "/" + std::to_string(seeds.size()) +
              " seeds, acc(10)>acc(0) in " + std::to_string(accuracy_votes) + "/" + std::to_string(seeds.size()) +
              "; scannable share" + detail.str());
}

void criterion_ratio(const PipelineResult& p) {
  double r002 = -1.0, r01 = -1.0;
  for (const auto& pt : p.ratio_sweep) {
    if (pt.ratio == 0.02) r002 = pt.trojan_r10;
    if (pt.ratio == 0.1) r01 = pt.trojan_r10;
  }
  verdict(7, r002 >= 0.0 && r01 > r002, "patch-ratio trend",
          "trojan R10 " + fmt("%.1f", r002) + " at 0.02, " + fmt("%.1f", r01) + " at 0.1");
}

void criterion_transfer(const PipelineResult& p) {
  const EvalReport* wb = find_report(p.matrix, AttackMode::WhiteBox, "A@blobs", "A@blobs", "blobs");
  const EvalReport* sd = find_report(p.matrix, AttackMode::SurrogateDataset, "A@blobs", "A@blobs", "stripes");
  const EvalReport* sm = find_report(p.matrix, AttackMode::SurrogateModel, "A@blobs", "B@blobs", "blobs");
  if (!wb || !sd || !sm) return verdict(8, false, "transfer ordering", "missing A@blobs reports");
  const double top = wb->mean_row.trojan_r10_tth;
  const auto ordered = [&](const EvalReport& r) {
    return r.mean_row.trojan_r10_clean < kCleanTrojanMax && r.mean_row.trojan_r10_tth > r.mean_row.trojan_r10_clean &&
           r.mean_row.trojan_r10_tth < top;
  };
  verdict(8, ordered(*sd) && ordered(*sm), "transfer ordering",
          "clean " + fmt("%.1f", sd->mean_row.trojan_r10_clean) + " < surrogate-dataset " +
              fmt("%.1f", sd->mean_row.trojan_r10_tth) + ", surrogate-model " + fmt("%.1f", sm->mean_row.trojan_r10_tth) +
              " < white-box " + fmt("%.1f", top));
}

// Average ranks (ties share the mean position), then Pearson on ranks.
double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double below = 0.0, equal = 0.0;
      for (double w : v) {
        below += w < v[i];
        equal += w == v[i];
      }
      r[i] = below + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx == 0.0 || syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

void criterion_mcs(const PipelineResult& p) {
  const std::string tag = family_tag("A@blobs", Flavor::Blobs);
  const EvalReport* wb = find_report(p.matrix, AttackMode::WhiteBox, "A@blobs", "A@blobs", "blobs");
  if (!wb || !p.matrix.families.count(tag)) return verdict(9, false, "MCS report", "missing white-box family");
  const World& w = p.lab.world(Flavor::Blobs);
  const MatcherModel& model = w.model(Arch::A).model;
  double worst = 0.0;
  std::map<std::string, double> mcs_of;
  for (const auto& ts : p.matrix.families.at(tag).sets) {
    std::vector<std::vector<double>> embs;
    std::vector<double> sum(model.d, 0.0);
    for (const auto& s : ts.context.sentences) {
      embs.push_back(embed_text(model, s).vec);
      for (std::size_t j = 0; j < model.d; ++j) sum[j] += embs.back()[j];
    }
    double n2 = 0.0;
    for (double v : sum) n2 += v * v;
    double mcs = 0.0;
    for (const auto& e : embs) {
      double dp = 0.0, ne = 0.0;
      for (std::size_t j = 0; j < model.d; ++j) {
        dp += e[j] * sum[j];
        ne += e[j] * e[j];
      }
      mcs += dp / std::sqrt(n2 * ne);
    }
    mcs /= static_cast<double>(embs.size());
    worst = std::max(worst, std::abs(mcs - ts.context.mcs));
    mcs_of[ts.word] = mcs;
  }
  std::vector<double> xs, ys;
  bool rows_match = true;
  for (const auto& row : wb->rows) {
    rows_match = rows_match && mcs_of.count(row.keyword) && std::abs(mcs_of[row.keyword] - row.mcs) <= kMcsTol;
    xs.push_back(row.mcs);
    ys.push_back(row.trojan_r10_tth);
  }
  const double rho = oracle_spearman(xs, ys);
  const bool rho_ok = std::abs(rho - spearman(xs, ys)) <= 1e-12;
  const bool pass = worst <= kMcsTol && rows_match && rho_ok && rho > kSpearmanFail;
  std::string note = rho > 0.0 ? "positive" : (rho > kSpearmanFail ? "WARN non-positive" : "negative");
  verdict(9, pass, "MCS recomputation and association",
          "max |dMCS| " + fmt("%.3g", worst) + ", Spearman(MCS, trojan R10) " + fmt("%.3f", rho) + " (" + note + ")");
}

void criterion_determinism(const fs::path& a, const fs::path& b) {
  std::size_t compared = 0, differ = 0, missing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    const auto ext = entry.path().extension();
    if (!entry.is_regular_file() || (ext != ".csv" && ext != ".model")) continue;
    const fs::path twin = b / fs::relative(entry.path(), a);
    ++compared;
    if (!fs::exists(twin)) {
      ++missing;
    } else if (read_file(entry.path()) != read_file(twin)) {
      ++differ;
      std::cout << "  differs: " << fs::relative(entry.path(), a).string() << "\n";
    }
  }
  std::size_t in_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(b)) {
    const auto ext = entry.path().extension();
    in_b += entry.is_regular_file() && (ext == ".csv" || ext == ".model");
  }
  verdict(10, compared > 0 && differ == 0 && missing == 0 && in_b == compared, "determinism",
          std::to_string(compared) + " CSV/model files compared, " + std::to_string(differ) + " differ, " +
              std::to_string(missing) + " missing");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: tthlab_acceptance <scratch dir>\n";
    return 2;
  }
  const fs::path root = argv[1];
  try {
    criterion_gradients();
    criterion_masking();
    criterion_retrieval_oracle();

    std::error_code ec;
    fs::remove_all(root, ec);
    RunConfig cfg;
    cfg.out_dir = (root / "run1").string();
    fs::create_directories(root);
    std::ofstream log1(root / "run1.log");
    const PipelineResult run1 = run_pipeline(cfg, log1);
    criterion_clean_quality(run1);
    criterion_white_box(run1);
    criterion_lambda(run1);
    criterion_ratio(run1);
    criterion_transfer(run1);
    criterion_mcs(run1);

    cfg.out_dir = (root / "run2").string();
    std::ofstream log2(root / "run2.log");
    run_pipeline(cfg, log2);
    criterion_determinism(root / "run1", root / "run2");
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << "\n";
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

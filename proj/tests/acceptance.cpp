// One PASS/FAIL line per acceptance criterion. Oracles here are written
// independently of the unit tests.
//
//   mmpkd_acceptance [--work-dir DIR] [--only N]

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck_suite.hpp"
#include "mmpkd/attention_eval.hpp"
#include "mmpkd/auroc.hpp"
#include "mmpkd/distill.hpp"
#include "mmpkd/experiment.hpp"
#include "mmpkd/rng.hpp"
#include "mmpkd/stats.hpp"
#include "mmpkd/synth_data.hpp"
#include "mmpkd/teacher.hpp"

using namespace mmpkd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- 1 ------------------------------------------------------------------

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = testing::run_primitive_gradchecks(20, 1e-5, 101);
    const auto comp = testing::run_composition_gradchecks(20, 1e-5, 202);
    results.insert(results.end(), comp.begin(), comp.end());
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name;
    bool ok = elapsed < 60.0;
    for (const auto& r : results) {
        ok = ok && r.instances >= 20 && r.max_rel_error < 1e-6;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
    }
    return {ok, std::to_string(results.size()) + " checks x 20 instances, worst rel err " + fmt("%.2e", worst) + " (" +
                    worst_name + "), " + fmt("%.1fs", elapsed)};
}

// ---- 2 ------------------------------------------------------------------

data::Dataset small_data(std::uint64_t seed, std::size_t n_train) {
    data::GeneratorConfig g;
    g.seed = seed;
    g.n_train = n_train;
    g.n_val = 16;
    g.n_test = 16;
    return data::generate_dataset(g);
}

student::VitConfig small_arch() {
    student::VitConfig v;
    v.dim = 16;
    v.depth = 2;
    v.heads = 2;
    v.mlp_hidden = 32;
    return v;
}

teacher::TeacherModel fit_teacher(const data::Dataset& ds, std::uint64_t seed) {
    std::vector<std::vector<double>> x, xv;
    std::vector<int> y, yv;
    for (const auto& s : ds.train) {
        x.push_back(s.privileged);
        y.push_back(s.label);
    }
    for (const auto& s : ds.val) {
        xv.push_back(s.privileged);
        yv.push_back(s.label);
    }
    return teacher::train_teacher(x, y, teacher::Variant::Logistic, {}, seed, teacher::LabeledFeatures{&xv, &yv});
}

Outcome degeneracy_and_linearity() {
    const auto ds = small_data(21, 48);
    const auto t = fit_teacher(ds, 3);
    distill::DistillConfig base;
    base.epochs = 3;
    base.batch_size = 16;
    base.seed = 9;
    auto mm = base;
    mm.mode = distill::Mode::Mmpkd;
    mm.lambda = 0.0;
    mm.temperature = 4.0;
    const auto a = distill::train_student(ds, nullptr, base, small_arch());
    const auto b = distill::train_student(ds, &t, mm, small_arch());
    bool bitwise = a.train_loss == b.train_loss && a.val_loss == b.val_loss;
    const auto pa = a.model.parameters(), pb = b.model.parameters();
    bitwise = bitwise && pa.size() == pb.size();
    for (std::size_t i = 0; bitwise && i < pa.size(); ++i) {
        const auto da = pa[i].data(), db = pb[i].data();
        bitwise = da.size() == db.size() && std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) == 0;
    }

    Rng rng(5150);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto n = static_cast<std::size_t>(rng.integer(1, 64));
        std::vector<double> hard(n), soft(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            hard[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            soft[i] = rng.uniform();
            p[i] = rng.uniform(-0.05, 1.05);  // includes clamped values
        }
        const auto pt = nn::Tensor::from_data({n}, p);
        const double lam = rng.uniform();
        const double l0 = distill::compute_distill_loss(hard, soft, pt, 0.0).item();
        const double l1 = distill::compute_distill_loss(hard, soft, pt, 1.0).item();
        const double l = distill::compute_distill_loss(hard, soft, pt, lam).item();
        worst = std::max(worst, std::abs(l - ((1.0 - lam) * l0 + lam * l1)));
    }
    return {bitwise && worst <= 1e-12, std::string("lambda=0 vs baseline ") + (bitwise ? "bitwise equal" : "DIFFER") +
                                           " over 3 epochs; max interpolation gap " + fmt("%.2e", worst) +
                                           " on 100 batches"};
}

// ---- 3 ------------------------------------------------------------------

Outcome soft_labels() {
    Rng rng(303);
    double worst = 0.0;
    bool monotone = true, sign = true;
    const double temps[] = {1.0, 2.0, 4.0, 8.0};
    for (int k = 0; k < 2000; ++k) {
        double z = rng.uniform(-30.0, 30.0);
        if (k % 10 == 0) z = rng.uniform(-1e-3, 1e-3);
        if (z == 0.0) continue;
        double prev = 1.0;
        for (double T : temps) {
            const double s = teacher::soft_label(z, T).value;
            const double ref = 1.0 / (1.0 + std::exp(-z / T));
            worst = std::max(worst, std::abs(s - ref));
            const double dist = std::abs(s - 0.5);
            monotone = monotone && dist < prev;
            prev = dist;
            sign = sign && ((s > 0.5) == (z > 0.0)) && s != 0.5;
        }
    }
    return {worst <= 1e-12 && monotone && sign,
            "2000 logits x T{1,2,4,8}: max |s - sigmoid(z/T)| " + fmt("%.2e", worst) + ", |s-0.5| strictly decreasing: " +
                (monotone ? "yes" : "NO") + ", sign preserved: " + (sign ? "yes" : "NO")};
}

// ---- 4 ------------------------------------------------------------------

Outcome metric_oracles() {
    Rng rng(404);
    int maps = 0;
    double worst = 0.0;
    while (maps < 1000) {
        const auto h = static_cast<std::size_t>(rng.integer(1, 16)), w = static_cast<std::size_t>(rng.integer(1, 16));
        Image map(h, w);
        Mask mask(h, w);
        const bool ties = rng.uniform() < 0.5;
        for (auto& v : map.values) v = ties ? static_cast<double>(rng.integer(0, 5)) : rng.normal();
        for (auto& m : mask.values) m = rng.uniform() < 0.3;
        long pos = 0, neg = 0;
        for (auto m : mask.values) (m ? pos : neg)++;
        const auto got = eval::pixel_auroc(map, mask);
        if (pos == 0 || neg == 0) {
            if (got) return {false, "AUROC defined on a one-class mask"};
            continue;
        }
        double score = 0.0;
        for (std::size_t i = 0; i < map.size(); ++i)
            for (std::size_t j = 0; j < map.size(); ++j)
                if (mask.values[i] && !mask.values[j])
                    score += map.values[i] > map.values[j] ? 1.0 : map.values[i] == map.values[j] ? 0.5 : 0.0;
        const double ref = score / static_cast<double>(pos * neg);
        if (!got) return {false, "AUROC undefined on a two-class mask"};
        worst = std::max(worst, std::abs(*got - ref));
        ++maps;
    }

    const int E = 24;
    auto rbox = [&] {
        const int x0 = static_cast<int>(rng.integer(0, E - 1)), y0 = static_cast<int>(rng.integer(0, E - 1));
        return Box{x0, y0, static_cast<int>(rng.integer(x0 + 1, E)), static_cast<int>(rng.integer(y0 + 1, E))};
    };
    auto raster = [&](const std::vector<Box>& bs) {
        std::vector<char> c(E * E, 0);
        for (const auto& b : bs)
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x) c[y * E + x] = 1;
        return c;
    };
    int mismatches = 0;
    const int cases = 1200;
    for (int k = 0; k < cases; ++k) {
        std::vector<Box> pred, gt;
        for (int i = static_cast<int>(rng.integer(1, 3)); i > 0; --i) pred.push_back(rbox());
        for (int i = static_cast<int>(rng.integer(1, 2)); i > 0; --i) gt.push_back(rbox());
        double best = 0.0;
        for (const auto& p : pred)
            for (const auto& g : gt) {
                const auto a = raster({p}), b = raster({g});
                long in = 0, un = 0;
                for (int i = 0; i < E * E; ++i) {
                    in += a[i] && b[i];
                    un += a[i] || b[i];
                }
                best = std::max(best, static_cast<double>(in) / static_cast<double>(un));
            }
        const auto up = raster(pred), ug = raster(gt);
        long area = 0, out = 0;
        for (int i = 0; i < E * E; ++i) {
            area += up[i];
            out += up[i] && !ug[i];
        }
        const double fpr = static_cast<double>(out) / static_cast<double>(area);
        if (eval::best_match_iou(pred, gt) != best || eval::false_positive_rate(pred, gt).fpr != fpr) ++mismatches;
    }
    return {worst <= 1e-12 && mismatches == 0,
            std::to_string(maps) + " maps: max AUROC gap " + fmt("%.2e", worst) + "; " + std::to_string(cases) +
                " box cases: " + std::to_string(mismatches) + " IoU/FPR mismatches"};
}

// ---- 5 ------------------------------------------------------------------

double pairs_u(const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double x : a)
        for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
    return u;
}

double enumerate_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> all(a);
    all.insert(all.end(), b.begin(), b.end());
    const unsigned N = static_cast<unsigned>(all.size());
    const double mid = static_cast<double>(a.size() * b.size()) / 2.0;
    const double obs = std::abs(pairs_u(a, b) - mid);
    double hit = 0.0, total = 0.0;
    for (unsigned m = 0; m < (1u << N); ++m) {
        if (std::popcount(m) != static_cast<int>(a.size())) continue;
        std::vector<double> x, y;
        for (unsigned i = 0; i < N; ++i) ((m >> i) & 1u ? x : y).push_back(all[i]);
        total += 1.0;
        if (std::abs(pairs_u(x, y) - mid) >= obs - 1e-9) hit += 1.0;
    }
    return hit / total;
}

Outcome mann_whitney() {
    Rng rng(505);
    double worst = 0.0;
    int pairs = 0;
    for (std::size_t n = 1; n <= 7; ++n)
        for (std::size_t m = 1; m <= 7; ++m)
            for (int support : {2, 4, 100000}) {
                std::vector<double> a(n), b(m);
                for (auto& v : a) v = static_cast<double>(rng.integer(0, support));
                for (auto& v : b) v = static_cast<double>(rng.integer(0, support));
                const auto r = stats::mann_whitney_u(a, b);
                worst = std::max(worst, std::abs(r.p - enumerate_p(a, b)));
                if (!r.exact || r.u != pairs_u(a, b)) worst = 1.0;
                ++pairs;
            }
    const auto w = stats::mann_whitney_u(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6});
    const bool worked = w.u == 0.0 && w.p == 0.1;
    return {worst <= 1e-12 && worked, std::to_string(pairs) + " samples (n,m <= 7, tied and untied): max p gap " +
                                          fmt("%.2e", worst) + "; [1,2,3] vs [4,5,6]: U=" + fmt("%g", w.u) +
                                          " p=" + fmt("%.17g", w.p)};
}

// ---- 6 ------------------------------------------------------------------

Outcome stub_maps() {
    data::GeneratorConfig g;
    g.seed = 606;
    g.n_train = 2;
    g.n_val = 2;
    g.n_test = 200;
    const auto ds = data::generate_dataset(g);
    std::vector<Image> oracle, noise;
    Rng rng(66);
    for (const auto& s : ds.test) {
        Image m(s.roi_mask.height, s.roi_mask.width);
        for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = s.roi_mask.values[i];
        oracle.push_back(m);
        for (auto& v : m.values) v = rng.uniform();
        noise.push_back(m);
    }
    const auto good = eval::evaluate_maps(ds.test, oracle, {});
    int bad_images = 0;
    for (const auto& r : good.images)
        if (!r.pixel_auroc || *r.pixel_auroc != 1.0 || r.iou != 1.0 || r.fpr != 0.0) ++bad_images;
    const auto rnd = eval::evaluate_maps(ds.test, noise, {});
    const double mean = rnd.pixel_auroc ? rnd.pixel_auroc->mean : -1.0;
    return {bad_images == 0 && std::abs(mean - 0.5) <= 0.05,
            "oracle stub: " + std::to_string(good.images.size() - bad_images) + "/" + std::to_string(good.images.size()) +
                " images at AUROC=1, IoU=1, FPR=0; random stub over " + std::to_string(rnd.images.size()) +
                " images: mean pixel AUROC " + fmt("%.4f", mean)};
}

// ---- 7 ------------------------------------------------------------------

Outcome teacher_quality() {
    bool ok = true;
    std::string vals;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        data::GeneratorConfig g;
        g.seed = seed;
        const auto ds = data::generate_dataset(g);
        const auto t = fit_teacher(ds, seed);
        std::vector<double> p;
        std::vector<int> y;
        for (const auto& s : ds.val) {
            p.push_back(t.probability(s.privileged));
            y.push_back(s.label);
        }
        const auto a = auroc(p, y);
        ok = ok && a && *a >= 0.95;
        vals += (vals.empty() ? "" : " ") + fmt("%.4f", a.value_or(-1.0));
    }
    return {ok, "logistic teacher val AUROC over seeds 1-5: " + vals};
}

// ---- 8, 9 ---------------------------------------------------------------

struct PipelineRun {
    double seconds = 0.0;
    std::string error;
};

PipelineRun run_pipeline(const fs::path& out) {
    fs::remove_all(out);
    experiment::ExperimentConfig cfg;
    cfg.output_dir = out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        experiment::Experiment ex(cfg, {false, true, &std::cerr});  // warnings only
        ex.run_pipeline();
    } catch (const std::exception& e) {
        return {seconds_since(t0), e.what()};
    }
    return {seconds_since(t0), {}};
}

// every file a reader of the results compares: per-run metrics CSVs and the reports
std::vector<fs::path> result_files(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root);
        const auto ext = rel.extension().string();
        const bool metrics = rel.begin()->string() == "runs" && ext == ".csv";
        const bool report = rel.begin()->string() == "reports" && rel.parent_path() == "reports";
        if (metrics || report) files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    return files;
}

bool has_pixel(const std::string& ppm, unsigned char r, unsigned char g, unsigned char b) {
    // header "P6\nW H\n255\n"
    std::size_t pos = 0;
    for (int nl = 0; nl < 3 && pos < ppm.size(); ++pos)
        if (ppm[pos] == '\n') ++nl;
    for (std::size_t i = pos; i + 2 < ppm.size(); i += 3)
        if (static_cast<unsigned char>(ppm[i]) == r && static_cast<unsigned char>(ppm[i + 1]) == g &&
            static_cast<unsigned char>(ppm[i + 2]) == b)
            return true;
    return false;
}

Outcome end_to_end(const fs::path& out, const PipelineRun& run) {
    if (!run.error.empty()) return {false, "pipeline failed: " + run.error};
    std::vector<std::string> missing;
    auto need = [&](const fs::path& p) {
        if (!fs::exists(out / p)) missing.push_back(p.string());
    };
    need("data/manifest.json");
    need("teachers/teacher.json");
    experiment::ExperimentConfig cfg;
    for (auto mode : {"baseline", "mmpkd"})
        for (auto seed : cfg.seeds) {
            const fs::path run_dir = fs::path("runs") / mode / std::to_string(seed);
            need(run_dir / "student.ckpt");
            need(run_dir / "metrics_last_cls.csv");
            need(run_dir / "metrics_rollout.csv");
        }
    need("reports/comparison_last_cls.txt");
    need("reports/comparison_last_cls.csv");
    if (!missing.empty()) return {false, "missing " + missing.front() + " (+" + std::to_string(missing.size() - 1) + ")"};

    // table shape: metric columns with direction tags, one mean +- std row per method
    const auto report = slurp(out / "reports/comparison_last_cls.txt");
    // first cell equal to `first`; the title line also starts with "baseline"
    auto line_starting = [&](const std::string& first) {
        for (std::size_t at = 0; at < report.size();) {
            const auto end = report.find('\n', at);
            const auto line = report.substr(at, end - at);
            if (line.rfind(first + "  ", 0) == 0) return line;
            if (end == std::string::npos) break;
            at = end + 1;
        }
        return std::string();
    };
    const auto head = line_starting("method");
    bool table = !head.empty();
    for (auto tag : {"predictive_auroc (+)", "pixel_auroc (+)", "iou (+)", "fpr (-)"})
        table = table && head.find(tag) != std::string::npos;
    for (auto who : {"baseline", "mmpkd"}) {
        const auto line = line_starting(who);
        std::size_t pm = 0;
        for (std::size_t p = line.find("±"); p != std::string::npos; p = line.find("±", p + 1)) ++pm;
        table = table && pm == 4;
    }

    std::size_t overlays = 0;
    bool red = false, green = false;
    for (const auto& e : fs::directory_iterator(out / "reports/overlays")) {
        if (e.path().extension() != ".ppm") continue;
        ++overlays;
        const auto ppm = slurp(e.path());
        red = red || has_pixel(ppm, 255, 0, 0);
        green = green || has_pixel(ppm, 0, 255, 0);
    }

    // predictive AUROC from the per-seed summaries
    double means[2] = {0.0, 0.0};
    int mi = 0;
    for (auto mode : {"baseline", "mmpkd"}) {
        for (auto seed : cfg.seeds) {
            const auto j = nlohmann::json::parse(
                slurp(out / "runs" / mode / std::to_string(seed) / "metrics_last_cls.json"));
            means[mi] += j["summary"]["predictive_auroc"].get<double>() / static_cast<double>(cfg.seeds.size());
        }
        ++mi;
    }
    const double gap = std::abs(means[0] - means[1]);
    const bool ok = run.seconds < 900.0 && table && overlays >= 10 && red && green && gap <= 0.05;
    return {ok, fmt("%.0fs for 5 seeds x {baseline, mmpkd}; ", run.seconds) + "report table " +
                    (table ? "ok" : "MALFORMED") + "; " + std::to_string(overlays) + " overlays (red GT " +
                    (red ? "yes" : "NO") + ", green pred " + (green ? "yes" : "NO") + "); predictive AUROC " +
                    fmt("baseline %.4f, mmpkd %.4f, |diff| %.4f", means[0], means[1], gap)};
}

Outcome determinism(const fs::path& first, const fs::path& second, const PipelineRun& a, const PipelineRun& b) {
    if (!a.error.empty() || !b.error.empty()) return {false, "pipeline failed: " + a.error + b.error};
    const auto fa = result_files(first), fb = result_files(second);
    if (fa != fb) return {false, "different result file sets"};
    for (const auto& f : fa)
        if (slurp(first / f) != slurp(second / f)) return {false, f.string() + " differs"};
    return {true, std::to_string(fa.size()) + " metrics CSVs and reports byte-identical across two runs (" +
                      fmt("%.0fs", b.seconds) + " for the repeat)"};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "mmpkd-acceptance";
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: mmpkd_acceptance [--work-dir DIR] [--only N]\n";
            return 1;
        }
    }

    int failed = 0;
    auto report = [&](int n, const char* title, const std::function<Outcome()>& f) {
        if (only && only != n) return;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail
                  << std::endl;
    };

    report(1, "gradient correctness", gradients);
    report(2, "lambda=0 degeneracy and linearity", degeneracy_and_linearity);
    report(3, "soft-label temperature properties", soft_labels);
    report(4, "metric oracle equivalence", metric_oracles);
    report(5, "Mann-Whitney exactness", mann_whitney);
    report(6, "oracle and random stub evaluation", stub_maps);
    report(7, "teacher quality", teacher_quality);

    if (!only || only == 8 || only == 9) {
        const fs::path first = work / "run1", second = work / "run2";
        const auto a = run_pipeline(first);
        report(8, "end-to-end pipeline", [&] { return end_to_end(first, a); });
        if (!only || only == 9) {
            const auto b = run_pipeline(second);
            report(9, "end-to-end determinism", [&] { return determinism(first, second, a, b); });
        }
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << "(" << failed << " failing)" << std::endl;
    return failed ? 1 : 0;
}

// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Thresholds for the desk-scale experiments are the margins
// registered in docs/pilot.md before this runner was pointed at seed 0.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "taro/taro.hpp"

using namespace taro;
namespace fs = std::filesystem;

namespace {

namespace margin {
constexpr double kCleanFloor = 0.99;
constexpr double kUndefendedCeiling = 0.05;
constexpr double kDeskGain = 0.50;      // taro-2 minus undefended, worst case
constexpr double kGraphGap = 0.40;      // detached minus full unroll
constexpr double kStopGradSpread = 0.10; // |on - off|
constexpr double kConsistencyGain = 0.10;
constexpr double kAaGain = 0.20; // taro-aa minus taro-2
} // namespace margin

struct Outcome {
    bool pass = true;
    std::vector<std::string> lines;

    void check(bool ok, const std::string& what)
    {
        pass = pass && ok;
        lines.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
};

std::string pp(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.1f%%", 100.0 * v);
    return b;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome from_suite(const CheckSuite& s, double seconds, double budget)
{
    Outcome o;
    for (const auto& r : s.rows) o.check(r.pass, format_row(r).substr(7));
    if (budget > 0) o.check(seconds < budget, fmt("runtime %.1f s < %.0f s", seconds, budget));
    return o;
}

ExperimentReport run_preset(const std::string& name, const fs::path& out)
{
    const ExperimentConfig c = experiment_preset(name);
    return run_experiment(c, (out / name).string(), [](const std::string& s) { std::cerr << "    " << s << "\n"; });
}

void describe(Outcome& o, const ExperimentReport& rep)
{
    for (const auto& a : rep.arms) {
        std::string s = "     " + a.spec.label + ": clean " + pp(a.clean.mean);
        for (std::size_t k = 0; k < a.attacks.size(); ++k)
            s += ", " + rep.config.attacks[k].name + " " + pp(a.attacks[k].mean);
        s += ", worst " + pp(a.worst.mean);
        o.lines.push_back(s);
    }
}

Outcome desk_defense(const fs::path& out, double& seconds)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_preset("desk-defense", out);
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Outcome o;
    describe(o, rep);
    const auto& u = rep.arm("undefended");
    const auto& t = rep.arm("taro-2");
    o.check(u.clean.mean >= margin::kCleanFloor, "undefended clean " + pp(u.clean.mean) + " >= 99%");
    o.check(u.worst.mean <= margin::kUndefendedCeiling, "undefended robust " + pp(u.worst.mean) + " <= 5%");
    o.check(t.worst.mean - u.worst.mean >= margin::kDeskGain,
            fmt("taro-2 gain %.1f pp >= %.0f pp", 100 * (t.worst.mean - u.worst.mean), 100 * margin::kDeskGain));
    o.check(seconds < 600.0, fmt("runtime %.1f s < 600 s", seconds));
    return o;
}

// Jacobian of one gradient step on 0.5 (z-a)^T A (z-a) is I - eta A.
double quadratic_jacobian_error(Rng& rng)
{
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + static_cast<int>(rng.index(3));
        Eigen::MatrixXd B(d, d);
        for (int i = 0; i < d * d; ++i) B.data()[i] = rng.normal();
        const Eigen::MatrixXd A = 0.5 * (B + B.transpose());
        Eigen::VectorXd a(d);
        for (int i = 0; i < d; ++i) a[i] = rng.normal();
        const double eta = rng.uniform(0.05, 1.0);
        const QuadraticPurifier q(A, a, eta, 1);
        Tensor x0 = Tensor::zeros({1, static_cast<std::size_t>(d)});
        for (auto& v : x0.data) v = rng.normal();
        const Eigen::MatrixXd expect = Eigen::MatrixXd::Identity(d, d) - eta * A;
        for (int row = 0; row < d; ++row) {
            ad::Tape tape;
            Rng r(0);
            const auto x = tape.leaf(x0);
            const auto out = q.apply(x, r, differentiation_for(GradientMode::FullUnroll));
            const Tensor g = ad::grad(ad::slice(out, 1, row, row + 1), x).value();
            for (int j = 0; j < d; ++j) worst = std::max(worst, std::abs(g.data[j] - expect(row, j)));
        }
    }
    return worst;
}

Outcome graph_consistency(const fs::path& out)
{
    const auto rep = run_preset("graph-consistency", out);
    Outcome o;
    describe(o, rep);
    const auto& a = rep.arms.front();
    const double full = a.attacks[rep.attack_index("full-unroll")].mean;
    const double det = a.attacks[rep.attack_index("detached-unroll")].mean;
    o.check(det - full >= margin::kGraphGap,
            fmt("detached %.1f%% - full %.1f%% = %.1f pp", 100 * det, 100 * full, 100 * (det - full)) +
                fmt(" >= %.0f pp", 100 * margin::kGraphGap));
    Rng rng(70);
    const double jac = quadratic_jacobian_error(rng);
    o.check(jac < 1e-8, fmt("M=1 quadratic jacobian vs I - eta A: %.3g < 1e-8", jac));
    return o;
}

Outcome stopgrad(const fs::path& out)
{
    const auto rep = run_preset("stopgrad-ablation", out);
    Outcome o;
    describe(o, rep);
    const double on = rep.arm("stopgrad-on").worst.mean, off = rep.arm("stopgrad-off").worst.mean;
    o.check(std::abs(on - off) <= margin::kStopGradSpread,
            fmt("|on %.1f%% - off %.1f%%| = %.1f pp", 100 * on, 100 * off, 100 * std::abs(on - off)) +
                fmt(" <= %.0f pp", 100 * margin::kStopGradSpread));
    return o;
}

Outcome consistency(const fs::path& out)
{
    const auto rep = run_preset("table1-analog", out);
    Outcome o;
    describe(o, rep);
    o.check(rep.config.threat.norm == Norm::L2, "threat model is l2");
    std::size_t grid = 0;
    for (const auto& a : rep.arms) grid += a.spec.kind == PurifierKind::Taro;
    o.check(grid == 8 && fs::exists(out / "table1-analog" / "summary.csv"), "gamma x consistency grid emitted (8 arms)");
    const double off = rep.arm(presets::gamma_label(1.4, 0.0)).worst.mean;
    const double on = rep.arm(presets::gamma_label(1.4, 0.5)).worst.mean;
    o.check(on >= off, fmt("gamma=1.4: consistency on %.1f%% >= off %.1f%%", 100 * on, 100 * off));
    o.check(on - off >= margin::kConsistencyGain,
            fmt("gain %.1f pp >= %.0f pp", 100 * (on - off), 100 * margin::kConsistencyGain));
    return o;
}

Outcome adversary_aware(const fs::path& out)
{
    const auto rep = run_preset("taro-aa", out);
    Outcome o;
    describe(o, rep);
    const double zs = rep.arm("taro-2").worst.mean, aa = rep.arm("taro-aa").worst.mean;
    o.check(aa >= zs, fmt("taro-aa %.1f%% >= taro-2 %.1f%%", 100 * aa, 100 * zs));
    o.check(aa - zs >= margin::kAaGain, fmt("gain %.1f pp >= %.0f pp", 100 * (aa - zs), 100 * margin::kAaGain));

    // lambda_pert = 0 against deleting the branch, values and attack gradients
    const ExperimentConfig c = experiment_preset("taro-aa");
    const Trained t = prepare(c);
    const Dataset test = make_test_set(c, 0);
    AaConfig zero = rep.arm("taro-aa").spec.aa, bare = zero;
    zero.lambda_pert = 0.0;
    Rng a(11), b(11);
    const Tensor with = purify_aa(test.x, zero, *t.denoiser, t.pert.get(), a).x;
    const Tensor without = purify_aa(test.x, bare, *t.denoiser, nullptr, b).x;
    o.check(with == without, "lambda_pert=0 purified values bit-match the model-free path");
    auto grad_of = [&](const PerturbationModel* p, const AaConfig& cfg) {
        ad::Tape tape;
        Rng r(12);
        const auto x = tape.leaf(detail::row_block(test.x, 0, 16));
        const auto y = purify_aa(x, cfg, *t.denoiser, p, r, Differentiation::Full);
        return ad::grad(ad::sum(ad::mul(y, y)), x).value();
    };
    o.check(grad_of(t.pert.get(), zero) == grad_of(nullptr, bare),
            "lambda_pert=0 full-unroll gradients bit-match the model-free path");
    return o;
}

int sh(const std::string& cmd)
{
    const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return rc;
}

Outcome cli_determinism(const std::string& cli, const fs::path& out)
{
    Outcome o;
    const fs::path root = out / "cli";
    fs::remove_all(root);
    fs::create_directories(root);
    ExperimentConfig c = experiment_preset("taro-aa");
    c.name = "cli-determinism";
    c.trials = 2;
    c.samples = 48;
    c.corpus.samples = 128;
    c.pert.steps = 200;
    for (auto& a : c.attacks) a.steps = 5;
    const std::string cfg = (root / "config.json").string();
    write_text(cfg, serialize_config(c));

    const std::vector<std::pair<std::string, std::string>> cmds{
        {"synth", "synth"},
        {"train-classifier", "train-classifier"},
        {"train-denoiser", "train-denoiser"},
        {"train-pert", "train-pert"},
        {"purify", "purify --arm taro-aa"},
        {"attack", "attack --arm taro-2 --attack bpda-eot"},
        {"run", "run"},
        {"theory-check", "theory-check --suite 3 --suite 5"},
    };
    // Both invocations write to the same path (config.json records it), then move aside.
    const fs::path work = root / "work";
    for (const char* rep : {"a", "b"}) {
        for (const auto& [dir, args] : cmds) {
            const fs::path d = work / dir;
            const int rc = sh("\"" + cli + "\" " + args + " --config \"" + cfg + "\" --out \"" + d.string() + "\"");
            if (rc != 0) o.check(false, std::string("invocation ") + rep + ": taro " + args + " exited " + std::to_string(rc));
        }
        const int rc = sh("\"" + cli + "\" report \"" + (work / "run").string() + "\"");
        if (rc != 0) o.check(false, std::string("invocation ") + rep + ": taro report exited " + std::to_string(rc));
        fs::rename(work, root / rep);
    }

    std::size_t compared = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file() || e.path().filename() == "runtime.json") continue;
        const fs::path rel = fs::relative(e.path(), root / "a");
        const fs::path other = root / "b" / rel;
        ++compared;
        if (!fs::exists(other) || read_text(e.path().string()) != read_text(other.string())) {
            ++differing;
            o.lines.push_back("     differs: " + rel.string());
        }
    }
    o.check(compared >= 15 && differing == 0,
            std::to_string(compared) + " report files compared across two invocations, " + std::to_string(differing) +
                " differ");
    for (const auto& f : report_body_files())
        o.check(fs::exists(root / "a" / "run" / f), "run emitted " + f);
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    std::string cli;
    fs::path out = "acceptance-out";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--cli" && i + 1 < argc) cli = argv[++i];
        else if (a == "--out" && i + 1 < argc) out = argv[++i];
        else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
        } else {
            std::cerr << "usage: acceptance --cli <taro binary> [--out dir] [--only 1,2,...]\n";
            return 2;
        }
    }
    fs::create_directories(out);

    struct Criterion {
        int id;
        const char* title;
        std::function<Outcome(double&)> run;
    };
    auto suite = [](std::function<CheckSuite()> f, double budget) {
        return [f, budget](double& secs) {
            const auto t0 = std::chrono::steady_clock::now();
            const CheckSuite s = f();
            secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return from_suite(s, secs, budget);
        };
    };
    const std::vector<Criterion> criteria{
        {1, "autodiff correctness", suite([] { return checks::autodiff(1); }, 60)},
        {2, "tweedie and score identities", suite([] { return checks::tweedie(2); }, 120)},
        {3, "target algebra", suite([] { return checks::taro_algebra(3); }, 0)},
        {4, "risk decomposition", suite([] { return checks::risk_decomposition(4); }, 120)},
        {5, "affine precision", suite([] { return checks::affine_precision_suite(5); }, 0)},
        {6, "desk-scale defense efficacy", [&](double& s) { return desk_defense(out, s); }},
        {7, "graph-consistent evaluation", [&](double&) { return graph_consistency(out); }},
        {8, "stop-gradient ablation", [&](double&) { return stopgrad(out); }},
        {9, "consistency regularizer (l2)", [&](double&) { return consistency(out); }},
        {10, "adversary-aware pipeline", [&](double&) { return adversary_aware(out); }},
        {11, "cli determinism", [&](double&) {
             if (cli.empty()) throw Error("no --cli binary given");
             return cli_determinism(cli, out);
         }},
    };

    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        ++ran;
        double secs = 0.0;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(secs);
        } catch (const std::exception& e) {
            o.check(false, std::string("error: ") + e.what());
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& l : o.lines) std::printf("    %s\n", l.c_str());
        std::printf("%s  criterion %2d  %s  (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, wall);
        std::fflush(stdout);
        failed += !o.pass;
    }
    std::printf("acceptance: %d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "taro/taro.hpp"

using namespace taro;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* sub, Common& o)
{
    sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "named experiment preset");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--out", o.out, "output directory (defaults to the config's out)");
}

ExperimentConfig resolve(const Common& o)
{
    if (!o.config.empty() && !o.preset.empty()) throw Error("--config and --preset are mutually exclusive");
    ExperimentConfig c = !o.config.empty() ? load_config(o.config)
                                           : experiment_preset(o.preset.empty() ? "desk-defense" : o.preset);
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.out = o.out;
    c.validate();
    return c;
}

fs::path out_dir(const ExperimentConfig& c)
{
    fs::create_directories(c.out);
    return fs::path(c.out);
}

void say(const std::string& s) { std::cerr << s << "\n"; }

std::string pct(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%5.1f%%", 100.0 * v);
    return b;
}

std::string pct_sd(const MeanSd& m)
{
    char b[48];
    std::snprintf(b, sizeof b, "%5.1f +- %4.1f", 100.0 * m.mean, 100.0 * m.sd);
    return b;
}

void print_summary(const ExperimentReport& rep)
{
    std::printf("%s  fingerprint %s  trials %zu x %zu samples\n", rep.config.name.c_str(), rep.fingerprint.c_str(),
                rep.config.trials, rep.config.samples);
    std::printf("  %-22s %-14s", "arm", "clean");
    for (const auto& a : rep.config.attacks) std::printf(" %-18s", a.name.c_str());
    std::printf(" %-14s\n", "worst");
    for (const auto& arm : rep.arms) {
        std::printf("  %-22s %-14s", arm.spec.label.c_str(), pct_sd(arm.clean).c_str());
        for (const auto& r : arm.attacks) std::printf(" %-18s", pct_sd(r).c_str());
        std::printf(" %-14s\n", pct_sd(arm.worst).c_str());
    }
}

json denoiser_json(const ExperimentConfig& c, const Denoiser& d, const Dataset& train)
{
    if (c.denoiser.kind == DenoiserKind::Analytic) return json{{"kind", "analytic"}, {"gmm", train.gmm}};
    return json{{"kind", "learned"}, {"model", mlp_denoiser_to_json(dynamic_cast<const MlpDenoiser&>(d))}};
}

const ArmSpec& pick_arm(const ExperimentConfig& c, const std::string& label, std::size_t* index)
{
    for (std::size_t i = 0; i < c.arms.size(); ++i) {
        const bool match = label.empty() ? c.arms[i].kind != PurifierKind::None : c.arms[i].label == label;
        if (match) {
            *index = i;
            return c.arms[i];
        }
    }
    throw Error(label.empty() ? "config has no purifying arm" : "no arm labelled '" + label + "'");
}

int cmd_config(const Common& o)
{
    std::cout << serialize_config(resolve(o));
    return 0;
}

int cmd_synth(const Common& o)
{
    const ExperimentConfig c = resolve(o);
    const fs::path dir = out_dir(c);
    const Dataset train = stage("synth", [&] { return make_train_set(c); });
    save((dir / "train.json").string(), "dataset", train);
    for (std::size_t t = 0; t < c.trials; ++t)
        save((dir / ("test-" + std::to_string(t) + ".json")).string(), "dataset", make_test_set(c, t));
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(1, train.gmm.num_classes())));
    for (int y : train.y) ++counts[static_cast<std::size_t>(y)];
    std::printf("train %zu x %zu, %zu test sets of %zu; class counts", train.size(), train.dim(), c.trials, c.samples);
    for (auto n : counts) std::printf(" %zu", n);
    std::printf("\n");
    return 0;
}

int cmd_train_classifier(const Common& o, const std::string& data)
{
    const ExperimentConfig c = resolve(o);
    const fs::path dir = out_dir(c);
    const Dataset train = data.empty() ? make_train_set(c) : load<Dataset>(data, "dataset");
    const Classifier clf = stage("train-classifier", [&] { return fit_classifier(c, train); });
    save((dir / "classifier.json").string(), "classifier", clf);
    const Dataset test = make_test_set(c, 0);
    std::printf("train accuracy %s, test accuracy %s\n", pct(clf.accuracy(train.x, train.y)).c_str(),
                pct(clf.accuracy(test.x, test.y)).c_str());
    return 0;
}

int cmd_train_denoiser(const Common& o)
{
    const ExperimentConfig c = resolve(o);
    const fs::path dir = out_dir(c);
    const Dataset train = make_train_set(c);
    TrainLog log;
    const auto den = stage("train-denoiser", [&] { return make_denoiser(c, train, &log); });
    write_text((dir / "denoiser.json").string(), dump(envelope("denoiser", denoiser_json(c, *den, train))));
    if (c.denoiser.kind == DenoiserKind::Learned)
        std::printf("validation loss %.6g -> %.6g\n", log.initial_val_loss, log.final_val_loss);
    else
        std::printf("analytic denoiser over the ground-truth mixture\n");
    return 0;
}

int cmd_train_pert(const Common& o)
{
    const ExperimentConfig c = resolve(o);
    const fs::path dir = out_dir(c);
    const Dataset train = make_train_set(c);
    const Classifier clf = stage("train-classifier", [&] { return fit_classifier(c, train); });
    const ResidualCorpus corpus = stage("corpus", [&] { return make_corpus(c, train, clf); });
    TrainLog log;
    const PerturbationModel p = stage("train-pert", [&] { return fit_pert(c, corpus, &log); });
    save((dir / "corpus.json").string(), "corpus", corpus);
    save((dir / "pert.json").string(), "pert", p);
    std::printf("corpus %zu residuals (%zu attempted), validation loss %.6g -> %.6g\n", corpus.size(),
                corpus.attempted, log.initial_val_loss, log.final_val_loss);
    return 0;
}

int cmd_purify(const Common& o, const std::string& arm_label, const std::string& input)
{
    const ExperimentConfig c = resolve(o);
    const fs::path dir = out_dir(c);
    std::size_t index = 0;
    const ArmSpec& arm = pick_arm(c, arm_label, &index);
    const Trained t = prepare(c);
    const Dataset data = input.empty() ? make_test_set(c, 0) : load<Dataset>(input, "dataset");
    const Pipeline& pipe = t.pipelines[index];
    Rng rng = Rng(c.seed).child(300);
    Dataset out = data;
    out.x = stage("purify " + arm.label, [&] { return pipe.purifier ? pipe.purifier->apply(data.x, rng) : data.x; });
    save((dir / "purified.json").string(), "dataset", out);
    std::printf("%s: %zu points, accuracy before %s after %s\n", arm.label.c_str(), data.size(),
                pct(pipe.classifier->accuracy(data.x, data.y)).c_str(),
                pct(pipe.classifier->accuracy(out.x, out.y)).c_str());
    return 0;
}

ExperimentConfig filtered(ExperimentConfig c, const std::vector<std::string>& arms,
                          const std::vector<std::string>& attacks)
{
    auto keep = [](const std::vector<std::string>& wanted, const std::string& name) {
        return wanted.empty() || std::find(wanted.begin(), wanted.end(), name) != wanted.end();
    };
    std::vector<ArmSpec> a;
    for (const auto& x : c.arms)
        if (keep(arms, x.label)) a.push_back(x);
    std::vector<AttackConfig> k;
    for (const auto& x : c.attacks)
        if (keep(attacks, x.name)) k.push_back(x);
    if (a.empty()) throw Error("no arm matches the --arm filter");
    if (k.empty()) throw Error("no attack matches the --attack filter");
    c.arms = std::move(a);
    c.attacks = std::move(k);
    c.validate();
    return c;
}

int cmd_run(const ExperimentConfig& c)
{
    const ExperimentReport rep = run_experiment(c, c.out, say);
    print_summary(rep);
    std::printf("report written to %s\n", c.out.c_str());
    return 0;
}

int cmd_theory_check(const Common& o, const std::vector<std::string>& only)
{
    const std::uint64_t seed = o.seed.value_or(0);
    std::vector<CheckSuite> suites;
    auto want = [&](const std::string& id) {
        return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
    };
    if (want("1")) suites.push_back(checks::autodiff(seed + 1));
    if (want("2")) suites.push_back(checks::tweedie(seed + 2));
    if (want("3")) suites.push_back(checks::taro_algebra(seed + 3));
    if (want("4")) suites.push_back(checks::risk_decomposition(seed + 4));
    if (want("5")) suites.push_back(checks::affine_precision_suite(seed + 5));
    if (suites.empty()) throw Error("--suite selects nothing; use 1..5");
    bool ok = true;
    json j = json::array();
    for (const auto& s : suites) {
        std::printf("[%s] %s: %s\n", s.id.c_str(), s.title.c_str(), s.pass() ? "PASS" : "FAIL");
        json rows = json::array();
        for (const auto& r : s.rows) {
            std::printf("%s\n", format_row(r).c_str());
            rows.push_back({{"name", r.name}, {"value", r.value}, {"relation", r.relation},
                            {"threshold", r.threshold}, {"pass", r.pass}, {"note", r.note}});
        }
        j.push_back({{"suite", s.id}, {"title", s.title}, {"pass", s.pass()}, {"rows", rows}});
        ok = ok && s.pass();
    }
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text((fs::path(o.out) / "theory-check.json").string(), dump(json{{"seed", seed}, {"suites", j}}));
    }
    return ok ? 0 : 1;
}

int cmd_report(const Common& o, const std::string& dir_opt)
{
    std::string dir = dir_opt.empty() ? o.out : dir_opt;
    if (dir.empty()) dir = resolve(o).out;
    const ExperimentReport rep = summarize(dir);
    write_text((fs::path(dir) / "summary.csv").string(), summary_csv(rep));
    write_text((fs::path(dir) / "summary.json").string(), dump(summary_json(rep)));
    print_summary(rep);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Temporal adversarial purification lab on toy mixtures"};
    app.require_subcommand(1);
    Common o;
    std::string data, arm, input, report_dir;
    std::vector<std::string> arms, attacks, suites;

    auto* config = app.add_subcommand("config", "print the resolved experiment config");
    auto* synth = app.add_subcommand("synth", "write the train and test datasets");
    auto* tclf = app.add_subcommand("train-classifier", "fit the clean classifier");
    auto* tden = app.add_subcommand("train-denoiser", "fit (or materialize) the denoiser");
    auto* tpert = app.add_subcommand("train-pert", "build the residual corpus and fit the perturbation model");
    auto* purify = app.add_subcommand("purify", "purify a dataset with one arm");
    auto* attack = app.add_subcommand("attack", "attack selected arms and write a report");
    auto* theory = app.add_subcommand("theory-check", "run the numerical identity checks");
    auto* run = app.add_subcommand("run", "full pipeline: synthesize, train, attack, report");
    auto* report = app.add_subcommand("report", "rebuild summaries from a run directory");
    for (auto* s : {config, synth, tclf, tden, tpert, purify, attack, theory, run, report}) add_common(s, o);
    tclf->add_option("--data", data, "training set written by synth")->check(CLI::ExistingFile);
    purify->add_option("--arm", arm, "arm label (default: first purifying arm)");
    purify->add_option("--input", input, "dataset to purify (default: test set 0)")->check(CLI::ExistingFile);
    attack->add_option("--arm", arms, "restrict to these arm labels");
    attack->add_option("--attack", attacks, "restrict to these attack names");
    theory->add_option("--suite", suites, "suite ids 1..5 (default: all)");
    report->add_option("dir", report_dir, "run directory (default: --out or the config's out)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (config->parsed()) return cmd_config(o);
        if (synth->parsed()) return cmd_synth(o);
        if (tclf->parsed()) return cmd_train_classifier(o, data);
        if (tden->parsed()) return cmd_train_denoiser(o);
        if (tpert->parsed()) return cmd_train_pert(o);
        if (purify->parsed()) return cmd_purify(o, arm, input);
        if (attack->parsed()) return cmd_run(filtered(resolve(o), arms, attacks));
        if (theory->parsed()) return cmd_theory_check(o, suites);
        if (run->parsed()) return cmd_run(resolve(o));
        if (report->parsed()) return cmd_report(o, report_dir);
    } catch (const std::exception& e) {
        std::cerr << "taro: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

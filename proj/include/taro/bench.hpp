#ifndef TARO_BENCH_HPP
#define TARO_BENCH_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <memory>
#include <string>
#include <vector>

#include "taro/config.hpp"

namespace taro {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the canonical config with the output path removed.
inline std::string config_fingerprint(const ExperimentConfig& c)
{
    json j = c;
    j.erase("out");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

// Fixed seed streams derived from the config seed.
namespace streams {
inline Rng train_data(const Rng& root) { return root.child(1); }
inline Rng classifier(const Rng& root) { return root.child(2); }
inline Rng denoiser(const Rng& root) { return root.child(3); }
inline Rng corpus(const Rng& root) { return root.child(4); }
inline Rng pert(const Rng& root) { return root.child(5); }
inline Rng arm_classifier(const Rng& root, std::size_t arm) { return root.child(6).child(arm); }
inline Rng purify_train(const Rng& root, std::size_t arm) { return root.child(7).child(arm); }
inline Rng test_data(const Rng& root, std::size_t trial) { return root.child(100).child(trial); }
inline Rng attack(const Rng& root, std::size_t trial) { return root.child(200).child(trial); }
} // namespace streams

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0; // sample standard deviation; zero for a single trial
    std::vector<double> trials;

    static MeanSd of(std::vector<double> v)
    {
        MeanSd m;
        m.trials = std::move(v);
        if (m.trials.empty()) return m;
        for (double x : m.trials) m.mean += x;
        m.mean /= static_cast<double>(m.trials.size());
        if (m.trials.size() > 1) {
            double s = 0.0;
            for (double x : m.trials) s += (x - m.mean) * (x - m.mean);
            m.sd = std::sqrt(s / static_cast<double>(m.trials.size() - 1));
        }
        return m;
    }
};

inline void to_json(json& j, const MeanSd& m) { j = json{{"mean", m.mean}, {"sd", m.sd}, {"trials", m.trials}}; }

struct SampleRow {
    std::size_t trial = 0;
    std::string arm, attack;
    std::size_t index = 0;
    int label = 0, pred_clean = 0, pred_adv = 0;
    double norm = 0.0;
};

struct ArmReport {
    ArmSpec spec;
    MeanSd clean;
    std::vector<MeanSd> attacks; // parallel to config.attacks
    MeanSd worst;                // correct under every attack
};

struct ExperimentReport {
    std::string fingerprint;
    ExperimentConfig config;
    std::vector<ArmReport> arms;
    std::vector<SampleRow> rows;
    json extras; // training diagnostics
    std::map<std::string, double> seconds;

    const ArmReport& arm(const std::string& label) const
    {
        for (const auto& a : arms)
            if (a.spec.label == label) return a;
        throw Error("report: no arm '" + label + "'");
    }

    std::size_t attack_index(const std::string& name) const
    {
        for (std::size_t i = 0; i < config.attacks.size(); ++i)
            if (config.attacks[i].name == name) return i;
        throw Error("report: no attack '" + name + "'");
    }
};

// ---- report files ----------------------------------------------------------

inline std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline const char* kRowsHeader = "trial,arm,attack,index,label,pred_clean,pred_adv,norm\n";
inline const char* kSummaryHeader =
    "arm,purifier,gamma,lambda_cons,stop_gradient,lambda_pert,attack,mode,clean_mean,clean_sd,robust_mean,robust_sd\n";

inline std::string row_line(const SampleRow& r)
{
    return std::to_string(r.trial) + "," + csv_field(r.arm) + "," + csv_field(r.attack) + "," + std::to_string(r.index) +
           "," + std::to_string(r.label) + "," + std::to_string(r.pred_clean) + "," + std::to_string(r.pred_adv) + "," +
           fmt_double(r.norm) + "\n";
}

inline std::string summary_csv(const ExperimentReport& rep)
{
    std::string out = kSummaryHeader;
    for (const auto& a : rep.arms) {
        const TaroConfig* t = a.spec.taro_config();
        const std::string lead = csv_field(a.spec.label) + "," + purifier_kind_name(a.spec.kind) + "," +
                                 (t ? fmt_double(t->gamma) : "") + "," + (t ? fmt_double(t->lambda_cons) : "") + "," +
                                 (t ? (t->stop_gradient_target ? "1" : "0") : "") + "," +
                                 (a.spec.kind == PurifierKind::TaroAa ? fmt_double(a.spec.aa.lambda_pert) : "");
        auto line = [&](const std::string& attack, const std::string& mode, const MeanSd& r) {
            out += lead + "," + csv_field(attack) + "," + mode + "," + fmt_double(a.clean.mean) + "," +
                   fmt_double(a.clean.sd) + "," + fmt_double(r.mean) + "," + fmt_double(r.sd) + "\n";
        };
        for (std::size_t k = 0; k < a.attacks.size(); ++k)
            line(rep.config.attacks[k].name, gradient_mode_name(rep.config.attacks[k].mode), a.attacks[k]);
        line("worst", "", a.worst);
    }
    return out;
}

inline json summary_json(const ExperimentReport& rep)
{
    json arms = json::array();
    for (const auto& a : rep.arms) {
        json atk = json::array();
        for (std::size_t k = 0; k < a.attacks.size(); ++k)
            atk.push_back({{"name", rep.config.attacks[k].name},
                           {"mode", gradient_mode_name(rep.config.attacks[k].mode)},
                           {"robust", a.attacks[k]}});
        arms.push_back({{"label", a.spec.label},
                        {"purifier", purifier_kind_name(a.spec.kind)},
                        {"clean", a.clean},
                        {"attacks", atk},
                        {"worst", a.worst}});
    }
    return json{{"format", "taro-report"},
                {"version", kFormatVersion},
                {"name", rep.config.name},
                {"fingerprint", rep.fingerprint},
                {"threat", rep.config.threat},
                {"trials", rep.config.trials},
                {"samples", rep.config.samples},
                {"rows", rep.rows.size()},
                {"arms", arms},
                {"training", rep.extras}};
}

/// Writes config.json, rows.csv, summary.csv and summary.json (deterministic
/// bodies) plus runtime.json (wall-clock, excluded from comparisons).
inline void write_report(const ExperimentReport& rep, const std::string& dir)
{
    std::filesystem::create_directories(dir);
    write_text(dir + "/config.json", serialize_config(rep.config));
    std::string rows = kRowsHeader;
    for (const auto& r : rep.rows) rows += row_line(r);
    write_text(dir + "/rows.csv", rows);
    write_text(dir + "/summary.csv", summary_csv(rep));
    write_text(dir + "/summary.json", dump(summary_json(rep)));
    json rt = json::object();
    for (const auto& [k, v] : rep.seconds) rt[k] = v;
    write_text(dir + "/runtime.json", dump(json{{"seconds", rt}}));
}

inline std::vector<std::string> report_body_files()
{
    return {"config.json", "rows.csv", "summary.csv", "summary.json"};
}

// ---- pipeline pieces -------------------------------------------------------

/// Error tagged with the pipeline stage that raised it.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    } catch (const json::exception& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

inline Dataset make_train_set(const ExperimentConfig& c)
{
    Rng r = streams::train_data(Rng(c.seed));
    return synth_dataset(c.dataset.mixture(), c.dataset.n_train, r);
}

inline Dataset make_test_set(const ExperimentConfig& c, std::size_t trial)
{
    Rng r = streams::test_data(Rng(c.seed), trial);
    return synth_dataset(c.dataset.mixture(), c.samples, r);
}

inline Classifier fit_classifier(const ExperimentConfig& c, const Dataset& train)
{
    Rng r = streams::classifier(Rng(c.seed));
    return train_classifier(train.x, train.y, std::max(2, train.gmm.num_classes()), c.classifier, r);
}

inline std::shared_ptr<const Denoiser> make_denoiser(const ExperimentConfig& c, const Dataset& train,
                                                     TrainLog* log = nullptr)
{
    if (c.denoiser.kind == DenoiserKind::Analytic) return std::make_shared<GmmDenoiser>(train.gmm);
    Rng r = streams::denoiser(Rng(c.seed));
    Rng init = r.child(0), steps = r.child(1);
    MlpDenoiser m = MlpDenoiser::init(train.dim(), c.denoiser.hidden, c.denoiser.sigma_data, init);
    return std::make_shared<MlpDenoiser>(train_dsm(std::move(m), train.x, c.denoiser.dsm, steps, log));
}

inline ResidualCorpus make_corpus(const ExperimentConfig& c, const Dataset& train, const Classifier& clf)
{
    return generate_residual_corpus(train, clf, c.corpus, streams::corpus(Rng(c.seed)));
}

inline PerturbationModel fit_pert(const ExperimentConfig& c, const ResidualCorpus& corpus, TrainLog* log = nullptr)
{
    Rng r = streams::pert(Rng(c.seed));
    return train_perturbation_model(corpus, c.pert, r, log);
}

inline std::shared_ptr<const Purifier> make_purifier(const ArmSpec& a, std::shared_ptr<const Denoiser> den,
                                                     std::shared_ptr<const PerturbationModel> pert)
{
    switch (a.kind) {
    case PurifierKind::None: return nullptr;
    case PurifierKind::Taro: return std::make_shared<TaroPurifier>(a.taro, std::move(den));
    case PurifierKind::TaroAa: return std::make_shared<TaroAaPurifier>(a.aa, std::move(den), std::move(pert));
    case PurifierKind::Cosine: {
        const Eigen::VectorXd anchor =
            Eigen::Map<const Eigen::VectorXd>(a.cosine.anchor.data(), static_cast<Eigen::Index>(a.cosine.anchor.size()));
        return std::make_shared<CosinePurifier>(anchor, a.cosine.beta, a.cosine.eta, a.cosine.iters, a.cosine.radius);
    }
    }
    return nullptr;
}

/// Everything trained once per experiment.
struct Trained {
    Dataset train;
    std::shared_ptr<const Classifier> classifier;
    std::shared_ptr<const Denoiser> denoiser;
    std::shared_ptr<const PerturbationModel> pert;
    std::vector<Pipeline> pipelines; // one per arm
    json log = json::object();
};

inline Trained prepare(const ExperimentConfig& c)
{
    c.validate();
    Trained t;
    t.train = stage("synth", [&] { return make_train_set(c); });
    t.classifier = stage("train-classifier", [&] { return std::make_shared<const Classifier>(fit_classifier(c, t.train)); });
    t.log["classifier_train_accuracy"] = t.classifier->accuracy(t.train.x, t.train.y);
    TrainLog dlog;
    t.denoiser = stage("train-denoiser", [&] { return make_denoiser(c, t.train, &dlog); });
    if (c.denoiser.kind == DenoiserKind::Learned) t.log["denoiser"] = dlog;
    if (c.needs_pert()) {
        const ResidualCorpus corpus = stage("corpus", [&] { return make_corpus(c, t.train, *t.classifier); });
        TrainLog plog;
        t.pert = stage("train-pert", [&] { return std::make_shared<const PerturbationModel>(fit_pert(c, corpus, &plog)); });
        t.log["corpus_size"] = corpus.size();
        t.log["corpus_attempted"] = corpus.attempted;
        t.log["pert"] = plog;
    }
    for (std::size_t i = 0; i < c.arms.size(); ++i) {
        const ArmSpec& a = c.arms[i];
        stage("arm " + a.label, [&] {
            Pipeline p{make_purifier(a, t.denoiser, t.pert), t.classifier};
            if (a.classifier_on_purified && p.purifier) {
                Rng pr = streams::purify_train(Rng(c.seed), i);
                const Tensor px = p.purifier->apply(t.train.x, pr);
                Rng cr = streams::arm_classifier(Rng(c.seed), i);
                p.classifier = std::make_shared<const Classifier>(
                    train_classifier(px, t.train.y, std::max(2, t.train.gmm.num_classes()), c.classifier, cr));
            }
            t.pipelines.push_back(std::move(p));
            return 0;
        });
    }
    return t;
}

using ProgressFn = std::function<void(const std::string&)>;

/// Full pipeline: synthesize, train, then evaluate every arm under every
/// attack for each trial. With a non-empty out_dir, rows.csv is appended and
/// flushed after each attack and the remaining files are written at the end.
inline ExperimentReport run_experiment(const ExperimentConfig& c, const std::string& out_dir = "",
                                       const ProgressFn& progress = nullptr)
{
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    ExperimentReport rep;
    rep.config = c;
    rep.fingerprint = config_fingerprint(c);
    const Trained t = prepare(c);
    rep.extras = t.log;
    rep.seconds["train"] = std::chrono::duration<double>(clock::now() - t0).count();

    std::ofstream rows_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        rows_file.open(out_dir + "/rows.csv", std::ios::binary | std::ios::trunc);
        if (!rows_file) throw Error("cannot write " + out_dir + "/rows.csv");
        rows_file << kRowsHeader << std::flush;
    }

    const std::size_t A = c.arms.size(), K = c.attacks.size();
    std::vector<std::vector<double>> clean(A), worst(A);
    std::vector<std::vector<std::vector<double>>> robust(A, std::vector<std::vector<double>>(K));
    for (std::size_t trial = 0; trial < c.trials; ++trial) {
        const Dataset test = stage("synth", [&] { return make_test_set(c, trial); });
        const Rng arng = streams::attack(Rng(c.seed), trial);
        for (std::size_t a = 0; a < A; ++a) {
            const std::string& label = c.arms[a].label;
            const auto ta = clock::now();
            stage("evaluate " + label, [&] {
                const Pipeline& pipe = t.pipelines[a];
                const auto pred_clean = predict_clean(pipe, test.x, arng);
                clean[a].push_back(accuracy_of(pred_clean, test.y));
                std::vector<bool> ok(test.size());
                for (std::size_t i = 0; i < test.size(); ++i) ok[i] = pred_clean[i] == test.y[i];
                if (K > 0) ok.assign(test.size(), true);
                for (std::size_t k = 0; k < K; ++k) {
                    const AttackResult r = pgd_eot(test.x, test.y, pipe, c.threat, c.attacks[k], arng);
                    robust[a][k].push_back(r.robust_accuracy());
                    std::string chunk;
                    for (std::size_t i = 0; i < test.size(); ++i) {
                        ok[i] = ok[i] && !r.success[i];
                        SampleRow row{trial, label, c.attacks[k].name, i, test.y[i], pred_clean[i], r.pred[i], r.norm[i]};
                        chunk += row_line(row);
                        rep.rows.push_back(std::move(row));
                    }
                    if (rows_file.is_open()) rows_file << chunk << std::flush;
                    if (progress)
                        progress("trial " + std::to_string(trial) + " " + label + " / " + c.attacks[k].name +
                                 ": robust " + fmt_double(r.robust_accuracy()));
                }
                std::size_t n_ok = 0;
                for (bool b : ok) n_ok += b;
                worst[a].push_back(static_cast<double>(n_ok) / static_cast<double>(test.size()));
                return 0;
            });
            rep.seconds["arm " + label] += std::chrono::duration<double>(clock::now() - ta).count();
        }
    }
    for (std::size_t a = 0; a < A; ++a) {
        ArmReport ar{c.arms[a], MeanSd::of(clean[a]), {}, MeanSd::of(worst[a])};
        for (std::size_t k = 0; k < K; ++k) ar.attacks.push_back(MeanSd::of(robust[a][k]));
        rep.arms.push_back(std::move(ar));
    }
    rep.seconds["total"] = std::chrono::duration<double>(clock::now() - t0).count();
    if (!out_dir.empty()) {
        rows_file.close();
        write_report(rep, out_dir);
    }
    return rep;
}

// ---- report regeneration ---------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

/// Rebuilds the summary of a finished run from its config.json and rows.csv.
inline ExperimentReport summarize(const std::string& dir)
{
    ExperimentReport rep;
    rep.config = load_config(dir + "/config.json");
    rep.fingerprint = config_fingerprint(rep.config);
    const ExperimentConfig& c = rep.config;
    std::istringstream in(read_text(dir + "/rows.csv"));
    std::string line;
    std::getline(in, line);
    if (line + "\n" != kRowsHeader) throw Error(dir + "/rows.csv: unexpected header");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw Error(dir + "/rows.csv:" + std::to_string(lineno) + ": expected 8 fields");
        rep.rows.push_back({std::stoul(f[0]), f[1], f[2], std::stoul(f[3]), std::stoi(f[4]), std::stoi(f[5]),
                            std::stoi(f[6]), std::stod(f[7])});
    }
    if (std::filesystem::exists(dir + "/summary.json")) {
        const json old = read_json(dir + "/summary.json");
        if (old.contains("training")) rep.extras = old.at("training");
    }
    const std::size_t K = c.attacks.size();
    for (const auto& arm : c.arms) {
        std::vector<double> clean, worst;
        std::vector<std::vector<double>> robust(K);
        for (std::size_t trial = 0; trial < c.trials; ++trial) {
            std::map<std::size_t, bool> ok_clean, ok_all;
            std::vector<std::pair<std::size_t, std::size_t>> per_attack(K, {0, 0});
            for (const auto& r : rep.rows) {
                if (r.trial != trial || r.arm != arm.label) continue;
                const std::size_t k = rep.attack_index(r.attack);
                ok_clean[r.index] = r.pred_clean == r.label;
                auto it = ok_all.try_emplace(r.index, true).first;
                it->second = it->second && r.pred_adv == r.label;
                per_attack[k].first += r.pred_adv == r.label;
                per_attack[k].second += 1;
            }
            if (ok_clean.empty()) throw Error(dir + ": no rows for arm '" + arm.label + "' in trial " + std::to_string(trial));
            auto frac = [](const std::map<std::size_t, bool>& m) {
                std::size_t n = 0;
                for (const auto& [i, b] : m) n += b;
                return static_cast<double>(n) / static_cast<double>(m.size());
            };
            clean.push_back(frac(ok_clean));
            worst.push_back(frac(ok_all));
            for (std::size_t k = 0; k < K; ++k)
                robust[k].push_back(per_attack[k].second
                                        ? static_cast<double>(per_attack[k].first) / static_cast<double>(per_attack[k].second)
                                        : 0.0);
        }
        ArmReport ar{arm, MeanSd::of(clean), {}, MeanSd::of(worst)};
        for (auto& v : robust) ar.attacks.push_back(MeanSd::of(std::move(v)));
        rep.arms.push_back(std::move(ar));
    }
    return rep;
}

} // namespace taro

#endif // TARO_BENCH_HPP

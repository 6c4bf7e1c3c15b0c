#ifndef TARO_CONFIG_HPP
#define TARO_CONFIG_HPP

#include <optional>
#include <string>
#include <vector>

#include "taro/serialize.hpp"
#include "taro/toy_purifiers.hpp"

namespace taro {

inline constexpr int kConfigVersion = 1;

struct DatasetSpec {
    std::string preset = "separated-2d";
    std::optional<GaussianMixture> gmm; // overrides the preset when set
    std::size_t n_train = 1024;

    GaussianMixture mixture() const { return gmm ? *gmm : preset_gmm(preset); }
};

enum class DenoiserKind { Analytic, Learned };

struct DenoiserSpec {
    DenoiserKind kind = DenoiserKind::Analytic; // exact posterior mean of the data mixture
    std::vector<std::size_t> hidden = {64, 64};
    double sigma_data = 1.0;
    DsmConfig dsm;
};

enum class PurifierKind { None, Taro, TaroAa, Cosine };

inline std::string purifier_kind_name(PurifierKind k)
{
    switch (k) {
    case PurifierKind::None: return "none";
    case PurifierKind::Taro: return "taro";
    case PurifierKind::TaroAa: return "taro-aa";
    case PurifierKind::Cosine: return "cosine";
    }
    return "?";
}

inline PurifierKind parse_purifier_kind(const std::string& s)
{
    for (auto k : {PurifierKind::None, PurifierKind::Taro, PurifierKind::TaroAa, PurifierKind::Cosine})
        if (purifier_kind_name(k) == s) return k;
    throw Error("unknown purifier kind '" + s + "'");
}

struct CosineSpec {
    std::vector<double> anchor = {1.0, 0.0};
    double beta = 1.0;
    double eta = 5.0;
    std::size_t iters = 2;
    double radius = 2.0;
};

/// One defended (or undefended) pipeline evaluated under every attack.
struct ArmSpec {
    std::string label;
    PurifierKind kind = PurifierKind::None;
    TaroConfig taro = TaroConfig::taro2();
    AaConfig aa;
    CosineSpec cosine;
    bool classifier_on_purified = false; // retrain the classifier on purified training data

    const TaroConfig* taro_config() const
    {
        if (kind == PurifierKind::Taro) return &taro;
        if (kind == PurifierKind::TaroAa) return &aa.taro;
        return nullptr;
    }
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::string name = "custom";
    std::uint64_t seed = 0;
    DatasetSpec dataset;
    ClassifierSpec classifier;
    DenoiserSpec denoiser;
    CorpusSpec corpus;
    PertTrainConfig pert;
    std::vector<ArmSpec> arms;
    ThreatModel threat;
    std::vector<AttackConfig> attacks;
    std::size_t trials = 3;
    std::size_t samples = 512;
    std::string out = "out";

    bool needs_pert() const
    {
        for (const auto& a : arms)
            if (a.kind == PurifierKind::TaroAa && a.aa.lambda_pert > 0.0) return true;
        return false;
    }

    void validate() const
    {
        if (version != kConfigVersion) throw Error("config: unsupported version " + std::to_string(version));
        const GaussianMixture g = dataset.mixture();
        g.validate();
        if (dataset.n_train == 0) throw Error("config: dataset.n_train must be positive");
        classifier.validate();
        threat.validate();
        if (arms.empty()) throw Error("config: no arms");
        if (trials == 0 || samples == 0) throw Error("config: trials and samples must be positive");
        std::set<std::string> labels;
        for (const auto& a : arms) {
            if (a.label.empty()) throw Error("config: arm without label");
            if (!labels.insert(a.label).second) throw Error("config: duplicate arm label '" + a.label + "'");
            if (a.kind == PurifierKind::Taro) a.taro.validate();
            if (a.kind == PurifierKind::TaroAa) a.aa.validate();
            if (a.kind == PurifierKind::Cosine && a.cosine.anchor.size() != g.dim())
                throw Error("config: cosine anchor dimension does not match data");
        }
        std::set<std::string> names;
        for (const auto& a : attacks) {
            a.validate();
            if (!names.insert(a.name).second) throw Error("config: duplicate attack name '" + a.name + "'");
        }
        if (needs_pert() && !(corpus.eps >= 0.0)) throw Error("config: corpus eps must be nonnegative");
    }
};

// ---- json ------------------------------------------------------------------

inline void to_json(json& j, const DatasetSpec& d)
{
    j = json{{"preset", d.preset}, {"n_train", d.n_train}};
    if (d.gmm) j["gmm"] = *d.gmm;
}

inline void from_json(const json& j, DatasetSpec& d)
{
    io::check_keys(j, {"preset", "gmm", "n_train"}, "dataset");
    io::get_opt(j, "preset", d.preset);
    io::get_opt(j, "n_train", d.n_train);
    if (j.contains("gmm")) d.gmm = j.at("gmm").get<GaussianMixture>();
}

inline void to_json(json& j, const DenoiserSpec& d)
{
    j = json{{"kind", d.kind == DenoiserKind::Analytic ? "analytic" : "learned"}};
    if (d.kind == DenoiserKind::Learned) {
        j["hidden"] = d.hidden;
        j["sigma_data"] = d.sigma_data;
        j["dsm"] = d.dsm;
    }
}

inline void from_json(const json& j, DenoiserSpec& d)
{
    io::check_keys(j, {"kind", "hidden", "sigma_data", "dsm"}, "denoiser");
    const std::string k = io::str(j, "kind", "analytic");
    if (k == "analytic") d.kind = DenoiserKind::Analytic;
    else if (k == "learned") d.kind = DenoiserKind::Learned;
    else throw Error("denoiser: unknown kind '" + k + "'");
    io::get_opt(j, "hidden", d.hidden);
    io::get_opt(j, "sigma_data", d.sigma_data);
    io::get_opt(j, "dsm", d.dsm);
}

inline void to_json(json& j, const CosineSpec& c)
{
    j = json{{"anchor", c.anchor}, {"beta", c.beta}, {"eta", c.eta}, {"iters", c.iters}, {"radius", c.radius}};
}

inline void from_json(const json& j, CosineSpec& c)
{
    io::check_keys(j, {"anchor", "beta", "eta", "iters", "radius"}, "cosine");
    io::get_opt(j, "anchor", c.anchor);
    io::get_opt(j, "beta", c.beta);
    io::get_opt(j, "eta", c.eta);
    io::get_opt(j, "iters", c.iters);
    io::get_opt(j, "radius", c.radius);
}

inline void to_json(json& j, const ArmSpec& a)
{
    j = json{{"label", a.label}, {"purifier", purifier_kind_name(a.kind)}};
    if (a.kind == PurifierKind::Taro) j["taro"] = a.taro;
    if (a.kind == PurifierKind::TaroAa) j["taro_aa"] = a.aa;
    if (a.kind == PurifierKind::Cosine) j["cosine"] = a.cosine;
    if (a.classifier_on_purified) j["classifier_on_purified"] = true;
}

inline void from_json(const json& j, ArmSpec& a)
{
    io::check_keys(j, {"label", "purifier", "taro", "taro_aa", "cosine", "classifier_on_purified"}, "arm");
    a.label = j.at("label").get<std::string>();
    a.kind = parse_purifier_kind(io::str(j, "purifier", "none"));
    io::get_opt(j, "taro", a.taro);
    io::get_opt(j, "taro_aa", a.aa);
    io::get_opt(j, "cosine", a.cosine);
    io::get_opt(j, "classifier_on_purified", a.classifier_on_purified);
}

inline void to_json(json& j, const ExperimentConfig& c)
{
    j = json{{"format", "taro-experiment"},
             {"version", c.version},
             {"name", c.name},
             {"seed", c.seed},
             {"dataset", c.dataset},
             {"classifier", c.classifier},
             {"denoiser", c.denoiser},
             {"arms", c.arms},
             {"threat", c.threat},
             {"attacks", c.attacks},
             {"trials", c.trials},
             {"samples", c.samples},
             {"out", c.out}};
    if (c.needs_pert()) {
        j["corpus"] = c.corpus;
        j["pert"] = c.pert;
    }
}

inline void from_json(const json& j, ExperimentConfig& c)
{
    io::check_keys(j, {"format", "version", "name", "seed", "dataset", "classifier", "denoiser", "corpus", "pert", "arms",
                       "threat", "attacks", "trials", "samples", "out"},
                   "config");
    if (io::str(j, "format", "taro-experiment") != "taro-experiment")
        throw Error("config: format must be taro-experiment");
    if (!j.contains("version")) throw Error("config: missing version field");
    c.version = j.at("version").get<int>();
    if (c.version != kConfigVersion) throw Error("config: unsupported version " + std::to_string(c.version));
    io::get_opt(j, "name", c.name);
    io::get_opt(j, "seed", c.seed);
    io::get_opt(j, "dataset", c.dataset);
    io::get_opt(j, "classifier", c.classifier);
    io::get_opt(j, "denoiser", c.denoiser);
    io::get_opt(j, "corpus", c.corpus);
    io::get_opt(j, "pert", c.pert);
    io::get_opt(j, "arms", c.arms);
    io::get_opt(j, "threat", c.threat);
    io::get_opt(j, "attacks", c.attacks);
    io::get_opt(j, "trials", c.trials);
    io::get_opt(j, "samples", c.samples);
    io::get_opt(j, "out", c.out);
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& where = "config")
{
    try {
        ExperimentConfig c = json::parse(text).get<ExperimentConfig>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw Error(where + ": " + e.what());
    } catch (const Error& e) {
        throw Error(where + ": " + e.what());
    }
}

inline std::string serialize_config(const ExperimentConfig& c) { return dump(json(c)); }

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_text(path), path); }

// ---- presets ---------------------------------------------------------------

namespace presets {

inline AttackConfig full_unroll(std::size_t n_eot)
{
    AttackConfig a;
    a.name = "pgd-eot-full";
    a.n_eot = n_eot;
    return a;
}

inline AttackConfig bpda_matched(std::size_t n_eot)
{
    AttackConfig a = full_unroll(n_eot);
    a.name = "bpda-eot";
    a.mode = GradientMode::BpdaIdentity;
    return a;
}

inline ArmSpec undefended() { return ArmSpec{"undefended", PurifierKind::None, {}, {}, {}, false}; }

inline ArmSpec taro_arm(std::string label, TaroConfig t)
{
    ArmSpec a;
    a.label = std::move(label);
    a.kind = PurifierKind::Taro;
    a.taro = std::move(t);
    return a;
}

// TARO-2 at desk scale: step 0.1 instead of 0.02 (see docs/pilot.md).
inline TaroConfig desk_taro2()
{
    TaroConfig t = TaroConfig::taro2();
    t.step = 0.1;
    return t;
}

inline ExperimentConfig base(std::string name)
{
    ExperimentConfig c;
    c.name = std::move(name);
    c.classifier.kind = ClassifierKind::Linear;
    c.classifier.steps = 2000;
    c.classifier.lr = 0.2;
    c.out = "out/" + c.name;
    return c;
}

inline ExperimentConfig desk_defense()
{
    ExperimentConfig c = base("desk-defense");
    c.threat = {Norm::Linf, 0.25};
    c.arms = {undefended(), taro_arm("taro-2", desk_taro2())};
    c.attacks = {full_unroll(8), bpda_matched(8)};
    return c;
}

inline ExperimentConfig stopgrad_ablation()
{
    ExperimentConfig c = desk_defense();
    c.name = "stopgrad-ablation";
    c.out = "out/" + c.name;
    TaroConfig off = desk_taro2();
    off.stop_gradient_target = false;
    c.arms = {undefended(), taro_arm("stopgrad-on", desk_taro2()), taro_arm("stopgrad-off", off)};
    return c;
}

inline std::string gamma_label(double gamma, double cons)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "gamma=%.1f cons=%.1f", gamma, cons);
    return buf;
}

inline ExperimentConfig table1_analog()
{
    ExperimentConfig c = base("table1-analog");
    c.threat = {Norm::L2, 0.3};
    c.arms = {undefended()};
    for (double g : {1.0, 1.2, 1.4, 1.6})
        for (double cons : {0.0, 0.5}) {
            TaroConfig t = desk_taro2();
            t.gamma = g;
            t.lambda_cons = cons;
            c.arms.push_back(taro_arm(gamma_label(g, cons), t));
        }
    c.attacks = {full_unroll(4), bpda_matched(4)};
    return c;
}

// Matched TARO-2 / TARO-AA pair: gamma 1.1, linear [0.25 .. 0], 20 iterations, step 0.02.
inline ExperimentConfig taro_aa()
{
    ExperimentConfig c = base("taro-aa");
    c.threat = {Norm::L2, 0.3};
    TaroConfig t = TaroConfig::taro2();
    t.gamma = 1.1;
    t.step = 0.02;
    t.timesteps = TimestepSchedule::linear(0.25, 0.0);
    ArmSpec aa;
    aa.label = "taro-aa";
    aa.kind = PurifierKind::TaroAa;
    aa.aa.taro = t;
    aa.aa.lambda_pert = 0.25;
    c.arms = {undefended(), taro_arm("taro-2", t), aa};
    c.corpus.norm = Norm::L2;
    c.corpus.eps = 0.3;
    c.corpus.samples = 512;
    c.attacks = {full_unroll(4), bpda_matched(4)};
    return c;
}

inline ExperimentConfig graph_consistency()
{
    ExperimentConfig c = base("graph-consistency");
    c.dataset.preset = "arc-2d";
    c.dataset.n_train = 512;
    c.classifier.standardize = false;
    c.threat = {Norm::Linf, 0.4};
    ArmSpec arm;
    arm.label = "cosine-eta5-m2";
    arm.kind = PurifierKind::Cosine;
    arm.classifier_on_purified = true;
    c.arms = {arm};
    AttackConfig full;
    full.name = "full-unroll";
    AttackConfig det = full;
    det.name = "detached-unroll";
    det.mode = GradientMode::DetachedUnroll;
    AttackConfig one = full;
    one.name = "one-step-approx";
    one.mode = GradientMode::OneStepApprox;
    AttackConfig bp = full;
    bp.name = "bpda-identity";
    bp.mode = GradientMode::BpdaIdentity;
    c.attacks = {full, det, one, bp};
    return c;
}

inline ExperimentConfig bpda()
{
    ExperimentConfig c = desk_defense();
    c.name = "bpda";
    c.out = "out/" + c.name;
    AttackConfig b = AttackConfig::bpda();
    b.name = "bpda-eot-50x15";
    c.attacks = {b};
    return c;
}

} // namespace presets

inline std::vector<std::string> experiment_presets()
{
    return {"desk-defense", "table1-analog", "stopgrad-ablation", "taro-aa", "graph-consistency", "bpda"};
}

inline ExperimentConfig experiment_preset(const std::string& name)
{
    if (name == "desk-defense") return presets::desk_defense();
    if (name == "table1-analog") return presets::table1_analog();
    if (name == "stopgrad-ablation") return presets::stopgrad_ablation();
    if (name == "taro-aa") return presets::taro_aa();
    if (name == "graph-consistency") return presets::graph_consistency();
    if (name == "bpda") return presets::bpda();
    std::string known;
    for (const auto& p : experiment_presets()) known += (known.empty() ? "" : ", ") + p;
    throw Error("unknown preset '" + name + "' (known: " + known + ")");
}

} // namespace taro

#endif // TARO_CONFIG_HPP

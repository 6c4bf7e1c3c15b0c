#ifndef TARO_SERIALIZE_HPP
#define TARO_SERIALIZE_HPP

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "taro/adversary_aware.hpp"
#include "taro/denoiser.hpp"
#include "taro/train.hpp"

namespace taro {

using json = nlohmann::json;

namespace io {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) throw Error(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw Error(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void get_opt(const json& j, const char* key, T& out)
{
    if (j.contains(key)) j.at(key).get_to(out);
}

inline std::string str(const json& j, const char* key, const std::string& fallback)
{
    return j.contains(key) ? j.at(key).get<std::string>() : fallback;
}

} // namespace io

// ---- tensors and matrices --------------------------------------------------

inline void to_json(json& j, const Tensor& t) { j = json{{"shape", t.shape}, {"data", t.data}}; }

inline void from_json(const json& j, Tensor& t)
{
    io::check_keys(j, {"shape", "data"}, "tensor");
    Shape s = j.at("shape").get<Shape>();
    std::vector<double> d = j.at("data").get<std::vector<double>>();
    t = Tensor(std::move(s), std::move(d));
}

inline json eigen_to_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Eigen::MatrixXd eigen_from_json(const json& j)
{
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw Error("matrix: ragged rows");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
}

// ---- enums -----------------------------------------------------------------

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::GradientDescent ? "gd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s)
{
    if (s == "gd") return OptimizerKind::GradientDescent;
    if (s == "adam") return OptimizerKind::Adam;
    throw Error("unknown optimizer '" + s + "'");
}

inline std::string time_rule_name(TimeRule r) { return r == TimeRule::Sqrt ? "sqrt" : "linear"; }

inline TimeRule parse_time_rule(const std::string& s)
{
    if (s == "sqrt") return TimeRule::Sqrt;
    if (s == "linear") return TimeRule::Linear;
    throw Error("unknown time rule '" + s + "'");
}

// ---- models ----------------------------------------------------------------

inline void to_json(json& j, const Mlp& m)
{
    j = json{{"sizes", m.sizes}, {"activation", activation_name(m.activation)}, {"weights", m.weights},
             {"biases", m.biases}};
}

inline void from_json(const json& j, Mlp& m)
{
    io::check_keys(j, {"sizes", "activation", "weights", "biases"}, "mlp");
    m.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    m.activation = parse_activation(j.at("activation").get<std::string>());
    m.weights = j.at("weights").get<std::vector<Tensor>>();
    m.biases = j.at("biases").get<std::vector<Tensor>>();
    if (m.sizes.size() < 2 || m.weights.size() + 1 != m.sizes.size() || m.biases.size() != m.weights.size())
        throw Error("mlp: layer count mismatch");
    for (std::size_t l = 0; l < m.weights.size(); ++l)
        if (m.weights[l].shape != Shape{m.sizes[l], m.sizes[l + 1]} || m.biases[l].shape != Shape{1, m.sizes[l + 1]})
            throw Error("mlp: parameter shape mismatch in layer " + std::to_string(l));
}

inline void to_json(json& j, const Classifier& c) { j = json{{"net", c.net}, {"shift", c.shift}, {"scale", c.scale}}; }

inline void from_json(const json& j, Classifier& c)
{
    io::check_keys(j, {"net", "shift", "scale"}, "classifier");
    j.at("net").get_to(c.net);
    j.at("shift").get_to(c.shift);
    j.at("scale").get_to(c.scale);
    if (c.shift.shape != Shape{1, c.net.in_dim()} || c.scale.shape != c.shift.shape)
        throw Error("classifier: normalization shape mismatch");
}

inline void to_json(json& j, const PerturbationModel& p) { j = json{{"net", p.net}}; }

inline void from_json(const json& j, PerturbationModel& p)
{
    io::check_keys(j, {"net"}, "perturbation model");
    j.at("net").get_to(p.net);
    if (p.net.in_dim() != p.net.out_dim() + 1) throw Error("perturbation model: expected (d + 1) -> d network");
}

inline json mlp_denoiser_to_json(const MlpDenoiser& d) { return json{{"net", d.net()}, {"sigma_data", d.sigma_data()}}; }

inline MlpDenoiser mlp_denoiser_from_json(const json& j)
{
    io::check_keys(j, {"net", "sigma_data"}, "denoiser");
    return MlpDenoiser(j.at("net").get<Mlp>(), j.at("sigma_data").get<double>());
}

inline void to_json(json& j, const GaussianMixture& g)
{
    json means = json::array(), covs = json::array();
    for (const auto& m : g.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
    for (const auto& c : g.covariances) covs.push_back(eigen_to_json(c));
    j = json{{"weights", g.weights}, {"means", means}, {"covariances", covs}, {"labels", g.labels}};
}

inline void from_json(const json& j, GaussianMixture& g)
{
    io::check_keys(j, {"weights", "means", "covariances", "labels"}, "gmm");
    g.weights = j.at("weights").get<std::vector<double>>();
    g.means.clear();
    g.covariances.clear();
    for (const auto& m : j.at("means")) {
        const auto v = m.get<std::vector<double>>();
        g.means.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    for (const auto& c : j.at("covariances")) g.covariances.push_back(eigen_from_json(c));
    g.labels = j.at("labels").get<std::vector<int>>();
    g.validate();
}

inline void to_json(json& j, const Dataset& d) { j = json{{"x", d.x}, {"y", d.y}, {"gmm", d.gmm}}; }

inline void from_json(const json& j, Dataset& d)
{
    io::check_keys(j, {"x", "y", "gmm"}, "dataset");
    j.at("x").get_to(d.x);
    d.y = j.at("y").get<std::vector<int>>();
    j.at("gmm").get_to(d.gmm);
    if (d.x.rank() != 2 || d.x.rows() != d.y.size()) throw Error("dataset: label count mismatch");
}

inline void to_json(json& j, const ResidualCorpus& c)
{
    j = json{{"residuals", c.residuals}, {"norm", norm_name(c.norm)}, {"eps", c.eps},
             {"seed", c.seed},           {"attack_steps", c.attack_steps}, {"attempted", c.attempted}};
}

inline void from_json(const json& j, ResidualCorpus& c)
{
    io::check_keys(j, {"residuals", "norm", "eps", "seed", "attack_steps", "attempted"}, "corpus");
    j.at("residuals").get_to(c.residuals);
    c.norm = parse_norm(j.at("norm").get<std::string>());
    c.eps = j.at("eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.attack_steps = j.at("attack_steps").get<std::size_t>();
    c.attempted = j.at("attempted").get<std::size_t>();
}

// ---- configuration structs -------------------------------------------------

inline void to_json(json& j, const NoiseSchedule& s)
{
    j = json{{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"t_min", s.t_min}, {"t_max", s.t_max}};
}

inline void from_json(const json& j, NoiseSchedule& s)
{
    io::check_keys(j, {"sigma_min", "sigma_max", "t_min", "t_max"}, "noise schedule");
    io::get_opt(j, "sigma_min", s.sigma_min);
    io::get_opt(j, "sigma_max", s.sigma_max);
    io::get_opt(j, "t_min", s.t_min);
    io::get_opt(j, "t_max", s.t_max);
}

inline void to_json(json& j, const TimestepSchedule& s)
{
    j = json{{"kind", s.kind == TimestepSchedule::Kind::Linear ? "linear" : "uniform"}, {"start", s.start}, {"end", s.end}};
}

inline void from_json(const json& j, TimestepSchedule& s)
{
    io::check_keys(j, {"kind", "start", "end"}, "timesteps");
    const std::string k = io::str(j, "kind", "linear");
    if (k == "linear") s.kind = TimestepSchedule::Kind::Linear;
    else if (k == "uniform") s.kind = TimestepSchedule::Kind::Uniform;
    else throw Error("timesteps: unknown kind '" + k + "'");
    io::get_opt(j, "start", s.start);
    io::get_opt(j, "end", s.end);
}

inline void to_json(json& j, const TaroConfig& c)
{
    j = json{{"kappa", c.kappa},
             {"kappa1_is_t", c.kappa1_is_t},
             {"gamma", c.gamma},
             {"noise", c.noise},
             {"iters", c.iters},
             {"step", c.step},
             {"optimizer", optimizer_name(c.optimizer)},
             {"lambda_cons", c.lambda_cons},
             {"timesteps", c.timesteps},
             {"stop_gradient_target", c.stop_gradient_target},
             {"time_rule", time_rule_name(c.rule)}};
}

inline void from_json(const json& j, TaroConfig& c)
{
    io::check_keys(j, {"kappa", "kappa1_is_t", "gamma", "noise", "iters", "step", "optimizer", "lambda_cons",
                       "timesteps", "stop_gradient_target", "time_rule"},
                   "taro");
    io::get_opt(j, "kappa", c.kappa);
    io::get_opt(j, "kappa1_is_t", c.kappa1_is_t);
    io::get_opt(j, "gamma", c.gamma);
    io::get_opt(j, "noise", c.noise);
    io::get_opt(j, "iters", c.iters);
    io::get_opt(j, "step", c.step);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    io::get_opt(j, "lambda_cons", c.lambda_cons);
    io::get_opt(j, "timesteps", c.timesteps);
    io::get_opt(j, "stop_gradient_target", c.stop_gradient_target);
    if (j.contains("time_rule")) c.rule = parse_time_rule(j.at("time_rule").get<std::string>());
    c.validate();
}

inline void to_json(json& j, const AaConfig& c) { j = json{{"taro", c.taro}, {"lambda_pert", c.lambda_pert}}; }

inline void from_json(const json& j, AaConfig& c)
{
    io::check_keys(j, {"taro", "lambda_pert"}, "taro-aa");
    io::get_opt(j, "taro", c.taro);
    io::get_opt(j, "lambda_pert", c.lambda_pert);
    c.validate();
}

inline void to_json(json& j, const ClassifierSpec& s)
{
    j = json{{"kind", classifier_kind_name(s.kind)}, {"hidden", s.hidden}, {"activation", activation_name(s.activation)},
             {"steps", s.steps}, {"lr", s.lr}, {"standardize", s.standardize}};
}

inline void from_json(const json& j, ClassifierSpec& s)
{
    io::check_keys(j, {"kind", "hidden", "activation", "steps", "lr", "standardize"}, "classifier");
    if (j.contains("kind")) s.kind = parse_classifier_kind(j.at("kind").get<std::string>());
    io::get_opt(j, "hidden", s.hidden);
    if (j.contains("activation")) s.activation = parse_activation(j.at("activation").get<std::string>());
    io::get_opt(j, "steps", s.steps);
    io::get_opt(j, "lr", s.lr);
    io::get_opt(j, "standardize", s.standardize);
    s.validate();
}

inline void to_json(json& j, const ThreatModel& t)
{
    j = json{{"norm", norm_name(t.norm)}, {"eps", t.eps}, {"box", t.has_box}, {"box_lo", t.box_lo}, {"box_hi", t.box_hi}};
}

inline void from_json(const json& j, ThreatModel& t)
{
    io::check_keys(j, {"norm", "eps", "box", "box_lo", "box_hi"}, "threat");
    if (j.contains("norm")) t.norm = parse_norm(j.at("norm").get<std::string>());
    io::get_opt(j, "eps", t.eps);
    io::get_opt(j, "box", t.has_box);
    io::get_opt(j, "box_lo", t.box_lo);
    io::get_opt(j, "box_hi", t.box_hi);
    t.validate();
}

inline void to_json(json& j, const AttackConfig& a)
{
    j = json{{"name", a.name},           {"steps", a.steps},       {"step_size", a.step_size},
             {"n_eot", a.n_eot},         {"mode", gradient_mode_name(a.mode)}, {"restarts", a.restarts},
             {"random_start", a.random_start}, {"loss", attack_loss_name(a.loss)}, {"seed", a.seed},
             {"max_tape_nodes", a.max_tape_nodes}};
}

inline void from_json(const json& j, AttackConfig& a)
{
    io::check_keys(j, {"name", "steps", "step_size", "n_eot", "mode", "restarts", "random_start", "loss", "seed",
                       "max_tape_nodes"},
                   "attack");
    io::get_opt(j, "name", a.name);
    io::get_opt(j, "steps", a.steps);
    io::get_opt(j, "step_size", a.step_size);
    io::get_opt(j, "n_eot", a.n_eot);
    if (j.contains("mode")) a.mode = parse_gradient_mode(j.at("mode").get<std::string>());
    io::get_opt(j, "restarts", a.restarts);
    io::get_opt(j, "random_start", a.random_start);
    if (j.contains("loss")) a.loss = parse_attack_loss(j.at("loss").get<std::string>());
    io::get_opt(j, "seed", a.seed);
    io::get_opt(j, "max_tape_nodes", a.max_tape_nodes);
    a.validate();
}

inline void to_json(json& j, const DsmConfig& c)
{
    j = json{{"steps", c.steps},         {"batch", c.batch},         {"lr", c.lr},         {"sigma_min", c.sigma_min},
             {"sigma_max", c.sigma_max}, {"eval_every", c.eval_every}, {"val_size", c.val_size}};
}

inline void from_json(const json& j, DsmConfig& c)
{
    io::check_keys(j, {"steps", "batch", "lr", "sigma_min", "sigma_max", "eval_every", "val_size"}, "dsm");
    io::get_opt(j, "steps", c.steps);
    io::get_opt(j, "batch", c.batch);
    io::get_opt(j, "lr", c.lr);
    io::get_opt(j, "sigma_min", c.sigma_min);
    io::get_opt(j, "sigma_max", c.sigma_max);
    io::get_opt(j, "eval_every", c.eval_every);
    io::get_opt(j, "val_size", c.val_size);
}

inline void to_json(json& j, const PertTrainConfig& c)
{
    j = json{{"hidden", c.hidden}, {"steps", c.steps},           {"batch", c.batch},
             {"lr", c.lr},         {"eval_every", c.eval_every}, {"val_fraction", c.val_fraction}};
}

inline void from_json(const json& j, PertTrainConfig& c)
{
    io::check_keys(j, {"hidden", "steps", "batch", "lr", "eval_every", "val_fraction"}, "pert training");
    io::get_opt(j, "hidden", c.hidden);
    io::get_opt(j, "steps", c.steps);
    io::get_opt(j, "batch", c.batch);
    io::get_opt(j, "lr", c.lr);
    io::get_opt(j, "eval_every", c.eval_every);
    io::get_opt(j, "val_fraction", c.val_fraction);
}

inline void to_json(json& j, const CorpusSpec& c)
{
    j = json{{"norm", norm_name(c.norm)}, {"eps", c.eps}, {"samples", c.samples}, {"attack", c.attack}};
}

inline void from_json(const json& j, CorpusSpec& c)
{
    io::check_keys(j, {"norm", "eps", "samples", "attack"}, "corpus");
    if (j.contains("norm")) c.norm = parse_norm(j.at("norm").get<std::string>());
    io::get_opt(j, "eps", c.eps);
    io::get_opt(j, "samples", c.samples);
    io::get_opt(j, "attack", c.attack);
}

inline void to_json(json& j, const TrainLog& l)
{
    j = json{{"initial_val_loss", l.initial_val_loss}, {"final_val_loss", l.final_val_loss}, {"val_curve", l.val_curve}};
}

// ---- files -----------------------------------------------------------------

inline constexpr int kFormatVersion = 1;

/// {"format": kind, "version": 1, "data": payload}
inline json envelope(const std::string& kind, json payload)
{
    return json{{"format", "taro-" + kind}, {"version", kFormatVersion}, {"data", std::move(payload)}};
}

inline json open_envelope(const json& j, const std::string& kind)
{
    if (!j.is_object() || !j.contains("format") || !j.contains("version") || !j.contains("data"))
        throw Error("expected a taro-" + kind + " file with format, version and data fields");
    if (j.at("format").get<std::string>() != "taro-" + kind)
        throw Error("expected format taro-" + kind + ", found " + j.at("format").get<std::string>());
    if (j.at("version").get<int>() != kFormatVersion)
        throw Error("unsupported taro-" + kind + " version " + std::to_string(j.at("version").get<int>()));
    return j.at("data");
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << text;
    if (!f) throw Error("write failed for " + path);
}

inline std::string read_text(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot read " + path);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

inline json read_json(const std::string& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw Error(path + ": " + e.what());
    }
}

template <class T>
void save(const std::string& path, const std::string& kind, const T& value)
{
    write_text(path, dump(envelope(kind, json(value))));
}

template <class T>
T load(const std::string& path, const std::string& kind)
{
    try {
        return open_envelope(read_json(path), kind).get<T>();
    } catch (const json::exception& e) {
        throw Error(path + ": " + e.what());
    }
}

} // namespace taro

#endif // TARO_SERIALIZE_HPP

#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "density.hpp"
#include "diffusion.hpp"
#include "optim.hpp"

namespace catgen {

enum class ModelKind { argmax_flow, multinomial_diffusion, uniform };
enum class PosteriorKind { softplus, gumbel, gumbel_threshold, uniform_deq, variational_deq };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::argmax_flow: return "argmax-flow";
        case ModelKind::multinomial_diffusion: return "multinomial-diffusion";
        case ModelKind::uniform: return "uniform";
    }
    return "?";
}
inline ModelKind model_kind_from(const std::string& s) {
    if (s == "argmax-flow") return ModelKind::argmax_flow;
    if (s == "multinomial-diffusion") return ModelKind::multinomial_diffusion;
    if (s == "uniform") return ModelKind::uniform;
    throw std::invalid_argument("unknown model kind '" + s + "'");
}
inline std::string to_string(PosteriorKind k) {
    switch (k) {
        case PosteriorKind::softplus: return "softplus";
        case PosteriorKind::gumbel: return "gumbel";
        case PosteriorKind::gumbel_threshold: return "gumbel-threshold";
        case PosteriorKind::uniform_deq: return "uniform-deq";
        case PosteriorKind::variational_deq: return "variational-deq";
    }
    return "?";
}
inline PosteriorKind posterior_kind_from(const std::string& s) {
    if (s == "softplus") return PosteriorKind::softplus;
    if (s == "gumbel") return PosteriorKind::gumbel;
    if (s == "gumbel-threshold") return PosteriorKind::gumbel_threshold;
    if (s == "uniform-deq") return PosteriorKind::uniform_deq;
    if (s == "variational-deq") return PosteriorKind::variational_deq;
    throw std::invalid_argument("unknown posterior kind '" + s + "'");
}

// Plain-text `key = value` configuration. Unknown keys are errors.
struct TrainConfig {
    ModelKind model = ModelKind::multinomial_diffusion;
    PosteriorKind posterior = PosteriorKind::softplus;
    ToyDatasetSpec dataset;
    int epochs = 10;
    int batch_size = 64;
    double lr = 1e-3;
    double lr_decay = 0.995;
    uint64_t seed = 0;
    bool param_f32 = false;
    int T = 100;
    double s = 0.008;
    int denoiser_hidden = 128;
    int denoiser_blocks = 2;
    int flow_blocks = 4;
    int flow_hidden = 64;
    int posterior_hidden = 32;
    int posterior_layers = 4;
    int cartesian_base = 0;
    int iwbo_samples = 100;
    uint64_t eval_seed = 9000;

    void validate() const {
        dataset.validate();
        if (epochs < 0 || batch_size < 1) throw std::invalid_argument("config: bad epochs/batch size");
        if (!(lr > 0.0) || !(lr_decay > 0.0)) throw std::invalid_argument("config: lr and lr decay must be positive");
        if (T < 1) throw std::invalid_argument("config: T must be >= 1");
        if (iwbo_samples < 1) throw std::invalid_argument("config: iwbo samples must be >= 1");
    }

    int data_dims() const { return dataset.kind == DatasetKind::char_corpus ? dataset.length : 2; }
    int data_classes() const { return dataset.kind == DatasetKind::char_corpus ? 27 : dataset.K; }

    std::string canonical_text() const {
        std::ostringstream o;
        o.precision(17);
        o << "model = " << to_string(model) << "\n";
        o << "posterior = " << to_string(posterior) << "\n";
        o << "dataset.kind = " << (dataset.kind == DatasetKind::eight_gaussians ? "eight_gaussians" : "char_corpus") << "\n";
        o << "dataset.k = " << dataset.K << "\n";
        o << "dataset.length = " << dataset.length << "\n";
        o << "dataset.n_train = " << dataset.n_train << "\n";
        o << "dataset.n_val = " << dataset.n_val << "\n";
        o << "dataset.range_lo = " << dataset.range_lo << "\n";
        o << "dataset.range_hi = " << dataset.range_hi << "\n";
        o << "dataset.seed = " << dataset.seed << "\n";
        if (!dataset.patterns.empty()) {
            // trailing separator so patterns may end in spaces
            o << "dataset.patterns = ";
            for (const auto& p : dataset.patterns) o << p << "|";
            o << "\n";
        }
        o << "train.epochs = " << epochs << "\n";
        o << "train.batch_size = " << batch_size << "\n";
        o << "train.lr = " << lr << "\n";
        o << "train.lr_decay = " << lr_decay << "\n";
        o << "train.seed = " << seed << "\n";
        o << "train.param_dtype = " << (param_f32 ? "f32" : "f64") << "\n";
        o << "diffusion.t = " << T << "\n";
        o << "diffusion.s = " << s << "\n";
        o << "diffusion.hidden = " << denoiser_hidden << "\n";
        o << "diffusion.blocks = " << denoiser_blocks << "\n";
        o << "flow.blocks = " << flow_blocks << "\n";
        o << "flow.hidden = " << flow_hidden << "\n";
        o << "posterior.hidden = " << posterior_hidden << "\n";
        o << "posterior.layers = " << posterior_layers << "\n";
        o << "cartesian.base = " << cartesian_base << "\n";
        o << "eval.iwbo_samples = " << iwbo_samples << "\n";
        o << "eval.seed = " << eval_seed << "\n";
        return o.str();
    }

    static TrainConfig parse(const std::string& text) {
        TrainConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            cfg.set(key, val, lineno);
        }
        cfg.validate();
        return cfg;
    }

    void set(const std::string& key, const std::string& val, int lineno = 0) {
        auto bad = [&](const std::string& why) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + why);
        };
        auto as_int = [&](const std::string& v) {
            size_t used = 0;
            long long r = 0;
            try {
                r = std::stoll(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size() || v.empty()) bad("bad integer '" + v + "'");
            return r;
        };
        auto as_real = [&](const std::string& v) {
            size_t used = 0;
            double r = 0.0;
            try {
                r = std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size() || v.empty()) bad("bad number '" + v + "'");
            return r;
        };
        if (key == "model") model = model_kind_from(val);
        else if (key == "posterior") posterior = posterior_kind_from(val);
        else if (key == "dataset.kind") {
            if (val == "eight_gaussians") dataset.kind = DatasetKind::eight_gaussians;
            else if (val == "char_corpus") dataset.kind = DatasetKind::char_corpus;
            else bad("unknown dataset kind '" + val + "'");
        } else if (key == "dataset.k") dataset.K = static_cast<int>(as_int(val));
        else if (key == "dataset.length") dataset.length = static_cast<int>(as_int(val));
        else if (key == "dataset.n_train") dataset.n_train = as_int(val);
        else if (key == "dataset.n_val") dataset.n_val = as_int(val);
        else if (key == "dataset.range_lo") dataset.range_lo = as_real(val);
        else if (key == "dataset.range_hi") dataset.range_hi = as_real(val);
        else if (key == "dataset.seed") dataset.seed = static_cast<uint64_t>(as_int(val));
        else if (key == "dataset.patterns") {
            dataset.patterns.clear();
            std::istringstream ps(val);
            std::string item;
            while (std::getline(ps, item, '|')) dataset.patterns.push_back(item);
        } else if (key == "train.epochs") epochs = static_cast<int>(as_int(val));
        else if (key == "train.batch_size") batch_size = static_cast<int>(as_int(val));
        else if (key == "train.lr") lr = as_real(val);
        else if (key == "train.lr_decay") lr_decay = as_real(val);
        else if (key == "train.seed") seed = static_cast<uint64_t>(as_int(val));
        else if (key == "train.param_dtype") {
            if (val == "f32") param_f32 = true;
            else if (val == "f64") param_f32 = false;
            else bad("param dtype must be f32 or f64");
        } else if (key == "diffusion.t") T = static_cast<int>(as_int(val));
        else if (key == "diffusion.s") s = as_real(val);
        else if (key == "diffusion.hidden") denoiser_hidden = static_cast<int>(as_int(val));
        else if (key == "diffusion.blocks") denoiser_blocks = static_cast<int>(as_int(val));
        else if (key == "flow.blocks") flow_blocks = static_cast<int>(as_int(val));
        else if (key == "flow.hidden") flow_hidden = static_cast<int>(as_int(val));
        else if (key == "posterior.hidden") posterior_hidden = static_cast<int>(as_int(val));
        else if (key == "posterior.layers") posterior_layers = static_cast<int>(as_int(val));
        else if (key == "cartesian.base") cartesian_base = static_cast<int>(as_int(val));
        else if (key == "eval.iwbo_samples") iwbo_samples = static_cast<int>(as_int(val));
        else if (key == "eval.seed") eval_seed = static_cast<uint64_t>(as_int(val));
        else bad("unknown key '" + key + "'");
    }
};

// A buildable model of either family plus its configuration.
struct ModelBundle {
    TrainConfig config;
    ModelKind kind = ModelKind::multinomial_diffusion;

    std::unique_ptr<MlpDenoiser> denoiser;
    DiffusionModel diff;

    ArgmaxFlowModel amf;

    int data_dims() const { return config.data_dims(); }
    int data_classes() const { return config.data_classes(); }

    void visit_params(const ParamVisitor& fn) {
        if (kind == ModelKind::multinomial_diffusion) denoiser->visit_params("denoiser", fn);
        if (kind == ModelKind::argmax_flow) amf.visit_params("amf", fn);
    }
};

inline ModelBundle build_model(const TrainConfig& cfg) {
    cfg.validate();
    ModelBundle mb;
    mb.config = cfg;
    mb.kind = cfg.model;
    int D = cfg.data_dims(), K = cfg.data_classes();
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    if (cfg.model == ModelKind::multinomial_diffusion) {
        mb.denoiser = std::make_unique<MlpDenoiser>(D, K, cfg.T, cfg.denoiser_hidden, cfg.denoiser_blocks, rng);
        mb.diff.schedule = build_schedule(cfg.T, cfg.s);
        mb.diff.denoiser = mb.denoiser.get();
        mb.diff.dims = D;
        mb.diff.num_classes = K;
    } else if (cfg.model == ModelKind::argmax_flow) {
        mb.amf.set_shape(D, K, cfg.cartesian_base);
        int64_t n = static_cast<int64_t>(mb.amf.enc_dims) * mb.amf.enc_classes;
        mb.amf.density = std::make_unique<FlowModel>(n, cfg.flow_blocks, cfg.flow_hidden, rng);
        switch (cfg.posterior) {
            case PosteriorKind::softplus:
                mb.amf.posterior = std::make_unique<ThresholdPosterior>(mb.amf.enc_dims, mb.amf.enc_classes);
                break;
            case PosteriorKind::gumbel:
                mb.amf.posterior = std::make_unique<GumbelPosterior>(mb.amf.enc_dims, mb.amf.enc_classes);
                break;
            case PosteriorKind::gumbel_threshold:
                mb.amf.posterior = std::make_unique<GumbelThresholdPosterior>(mb.amf.enc_dims, mb.amf.enc_classes,
                                                                              cfg.posterior_hidden, cfg.posterior_layers, rng);
                break;
            case PosteriorKind::uniform_deq:
                mb.amf.posterior = std::make_unique<UniformDequant>();
                break;
            case PosteriorKind::variational_deq:
                mb.amf.posterior = std::make_unique<VariationalDequant>(mb.amf.enc_dims, mb.amf.enc_classes,
                                                                        cfg.posterior_hidden, cfg.posterior_layers, rng);
                break;
        }
    }
    return mb;
}

// match the empirical class distribution of the first minibatch
inline void init_flow_locations(ModelBundle& mb, const CategoricalBatch& first_batch) {
    if (mb.kind != ModelKind::argmax_flow) return;
    CategoricalBatch enc = mb.amf.encode(first_batch);
    if (auto* g = dynamic_cast<GumbelPosterior*>(mb.amf.posterior.get())) g->phi = init_gumbel_locations(enc);
    if (auto* gt = dynamic_cast<GumbelThresholdPosterior*>(mb.amf.posterior.get())) gt->phi = init_gumbel_locations(enc);
}

struct TrainResult {
    ModelBundle model;
    std::vector<double> epoch_loss;  // mean training loss (nats per sample)
    bool non_increasing_flagged = false;
    std::string rng_state;
};

namespace train_detail {

inline CategoricalBatch take_rows(const CategoricalBatch& x, const std::vector<int64_t>& ids, int64_t lo, int64_t hi) {
    CategoricalBatch out(hi - lo, x.dims, x.num_classes);
    for (int64_t i = lo; i < hi; ++i)
        for (int64_t d = 0; d < x.dims; ++d) out.at(i - lo, d) = x.at(ids[static_cast<size_t>(i)], d);
    return out;
}

inline void round_params_f32(ModelBundle& mb) {
    mb.visit_params([](const std::string&, Tensor& t) {
        for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
    });
}

}  // namespace train_detail

struct EpochStats {
    std::vector<double> epoch_loss;
    bool non_increasing_flagged = false;
    int64_t steps = 0;
    std::string rng_state;  // training rng at the end of the run
};

// Runs the optimization on an already-built bundle. Raises on a non-finite
// loss, naming the first non-finite operation on the tape.
inline EpochStats train_model(ModelBundle& mb, const Dataset& ds, std::ostream* log = nullptr);

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, std::ostream* log = nullptr) {
    cfg.validate();
    TrainResult res;
    res.model = build_model(cfg);
    EpochStats st = train_model(res.model, ds, log);
    res.epoch_loss = std::move(st.epoch_loss);
    res.non_increasing_flagged = st.non_increasing_flagged;
    res.rng_state = std::move(st.rng_state);
    return res;
}

inline EpochStats train_model(ModelBundle& mb, const Dataset& ds, std::ostream* log) {
    const TrainConfig& cfg = mb.config;
    cfg.validate();
    if (ds.train.num_classes != cfg.data_classes() || ds.train.dims != cfg.data_dims())
        throw std::invalid_argument("train: dataset K/D does not match config");
    EpochStats res;
    Rng rng(cfg.seed);
    Adam adam;
    LossHistory hist(cfg.T);
    int64_t n = ds.train.batch;
    std::vector<int64_t> ids(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;

    if (mb.kind == ModelKind::argmax_flow)
        init_flow_locations(mb, train_detail::take_rows(ds.train, ids, 0, std::min<int64_t>(n, cfg.batch_size)));
    if (mb.kind == ModelKind::uniform) {
        res.rng_state = rng.state();
        return res;
    }

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr_e = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
        // Fisher-Yates shuffle driven by the training rng
        for (int64_t i = n - 1; i > 0; --i) std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(rng.below(i + 1))]);
        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (int64_t lo = 0; lo + cfg.batch_size <= n || lo == 0; lo += cfg.batch_size) {
            int64_t hi = std::min<int64_t>(n, lo + cfg.batch_size);
            if (hi <= lo) break;
            CategoricalBatch xb = train_detail::take_rows(ds.train, ids, lo, hi);
            int64_t B = xb.batch;
            ad::Tape tape;
            ad::Bound bound;
            ad::Var loss;
            if (mb.kind == ModelKind::multinomial_diffusion) {
                Tensor log_x0 = index_to_log_onehot(xb, mb.diff.num_classes);
                std::vector<int> ts(static_cast<size_t>(B));
                Tensor weights({B});
                for (int64_t b = 0; b < B; ++b) {
                    TimestepDraw draw = sample_t_importance(hist, rng);
                    ts[static_cast<size_t>(b)] = draw.t;
                    weights[b] = 1.0 / (draw.q * static_cast<double>(cfg.T));
                }
                // weights make the estimator an unbiased per-t average; the
                // total KL sum is T times the reported mean
                CategoricalBatch xt = sample_categorical(q_marginal(mb.diff.schedule, log_x0, ts), rng);
                ad::Var lt = loss_term(tape, bound, mb.diff, xb, xt, ts);
                const Tensor& ltv = tape.val(lt);
                for (int64_t b = 0; b < B; ++b) hist.record(ts[static_cast<size_t>(b)], ltv[b]);
                ad::Var weighted = tape.mul(lt, tape.constant(weights));
                loss = tape.mul(tape.mean_all(weighted), static_cast<double>(cfg.T));
            } else {
                ad::Var e = mb.amf.elbo(tape, bound, xb, rng);
                loss = tape.neg(tape.mean_all(e));
            }
            double loss_val = tape.val(loss)[0];
            if (!std::isfinite(loss_val)) {
                std::string culprit = tape.first_non_finite();
                throw std::runtime_error("training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + "; first non-finite op: " +
                                         (culprit.empty() ? "(loss only)" : culprit));
            }
            tape.backward(loss);
            adam.step(bound.params(), bound.grads(tape), lr_e);
            if (cfg.param_f32) train_detail::round_params_f32(mb);
            loss_sum += loss_val * static_cast<double>(B);
            loss_count += B;
            ++step;
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
        if (log) (*log) << "epoch " << epoch << " train_loss_nats " << res.epoch_loss.back() << "\n";
    }
    // flag if the 10-epoch smoothed loss ever increases
    auto smoothed = [&](size_t i) {
        size_t lo = i >= 9 ? i - 9 : 0;
        double acc = 0.0;
        for (size_t j = lo; j <= i; ++j) acc += res.epoch_loss[j];
        return acc / static_cast<double>(i - lo + 1);
    };
    for (size_t i = 10; i < res.epoch_loss.size(); ++i)
        if (smoothed(i) > smoothed(i - 1) + 1e-9) res.non_increasing_flagged = true;
    res.steps = step;
    res.rng_state = rng.state();
    return res;
}

struct EvalReport {
    std::string metric;
    double mean_nats = 0.0;   // mean ELBO/IWBO (negative; a bound on log-lik)
    double se_nats = 0.0;
    double nll_nats = 0.0;    // -mean_nats
    double bpd = 0.0;         // nll / (D ln 2)
    int64_t n = 0;
};

inline EvalReport evaluate(ModelBundle& mb, const CategoricalBatch& data, const std::string& metric,
                           int iwbo_samples, uint64_t eval_seed) {
    if (data.num_classes != mb.data_classes() || data.dims != mb.data_dims())
        throw std::invalid_argument("evaluate: dataset K/D does not match checkpoint");
    if (metric != "elbo" && metric != "iwbo" && metric != "bpd")
        throw std::invalid_argument("evaluate: metric must be elbo, iwbo or bpd");
    if (metric == "iwbo" && mb.kind != ModelKind::argmax_flow)
        throw std::invalid_argument("evaluate: iwbo is only available for argmax-flow models");
    Rng rng(eval_seed);
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(data.batch));
    const int64_t chunk = 256;
    for (int64_t lo = 0; lo < data.batch; lo += chunk) {
        int64_t hi = std::min<int64_t>(data.batch, lo + chunk);
        CategoricalBatch xb(hi - lo, data.dims, data.num_classes);
        for (int64_t b = lo; b < hi; ++b)
            for (int64_t d = 0; d < data.dims; ++d) xb.at(b - lo, d) = data.at(b, d);
        Tensor e;
        if (mb.kind == ModelKind::uniform) {
            e = Tensor({hi - lo}, -static_cast<double>(data.dims) * std::log(static_cast<double>(data.num_classes)));
        } else if (mb.kind == ModelKind::multinomial_diffusion) {
            e = elbo(mb.diff, xb, ElboMode::full, rng);
        } else {
            e = (metric == "iwbo") ? mb.amf.iwbo(xb, iwbo_samples, rng) : mb.amf.elbo_value(xb, rng);
        }
        for (int64_t i = 0; i < e.numel(); ++i) vals.push_back(e[i]);
    }
    EvalReport rep;
    rep.metric = metric;
    rep.n = static_cast<int64_t>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var = vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
    rep.mean_nats = mean;
    rep.se_nats = std::sqrt(var / static_cast<double>(vals.size()));
    rep.nll_nats = -mean;
    rep.bpd = rep.nll_nats / (static_cast<double>(data.dims) * std::log(2.0));
    return rep;
}

// ---- probability-mass reports (D = 2 only) ----

inline Tensor data_pmf(const CategoricalBatch& x) {
    if (x.dims != 2) throw std::invalid_argument("pmf: requires D = 2");
    int K = x.num_classes;
    if (static_cast<int64_t>(K) * K > 10000) throw std::invalid_argument("pmf: K^2 too large");
    Tensor grid({K, K});
    for (int64_t b = 0; b < x.batch; ++b) grid.at(x.at(b, 0), x.at(b, 1)) += 1.0;
    for (double& v : grid.data) v /= static_cast<double>(x.batch);
    return grid;
}

// diffusion: Monte-Carlo pmf from ancestral samples (budget draws);
// argmax flow: importance-weighted estimate per cell (budget/K^2 draws each)
inline Tensor model_pmf(ModelBundle& mb, int64_t budget, uint64_t seed) {
    if (mb.data_dims() != 2) throw std::invalid_argument("pmf: requires D = 2");
    int K = mb.data_classes();
    Rng rng(seed);
    if (mb.kind == ModelKind::uniform) return Tensor({K, K}, 1.0 / static_cast<double>(K) / static_cast<double>(K));
    if (mb.kind == ModelKind::multinomial_diffusion) {
        CategoricalBatch s = ancestral_sample(mb.diff, budget, rng);
        return data_pmf(s);
    }
    int S = std::max<int>(16, static_cast<int>(budget / (static_cast<int64_t>(K) * K)));
    CategoricalBatch cells(static_cast<int64_t>(K) * K, 2, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            cells.at(static_cast<int64_t>(i) * K + j, 0) = i;
            cells.at(static_cast<int64_t>(i) * K + j, 1) = j;
        }
    // arithmetic mean of importance weights per cell = exp(log-mean-exp)
    Tensor iw = mb.amf.iwbo(cells, S, rng);
    Tensor grid({K, K});
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) grid.at(i, j) = std::exp(iw[static_cast<int64_t>(i) * K + j]);
    return grid;
}

inline double tv_distance(const Tensor& p, const Tensor& q) {
    check_same_shape(p, q, "tv_distance");
    double acc = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) acc += std::fabs(p[i] - q[i]);
    return 0.5 * acc;
}

// ---- checkpoint integration ----

inline Checkpoint make_checkpoint(ModelBundle& mb, const std::string& rng_state) {
    Checkpoint ck;
    ck.config_text = mb.config.canonical_text();
    if (mb.kind == ModelKind::multinomial_diffusion) {
        ck.has_schedule = true;
        ck.schedule = mb.diff.schedule;
    }
    mb.visit_params([&](const std::string& name, Tensor& t) { ck.params.emplace_back(name, t); });
    ck.rng_state = rng_state;
    return ck;
}

inline ModelBundle restore_model(const Checkpoint& ck) {
    TrainConfig cfg = TrainConfig::parse(ck.config_text);
    ModelBundle mb = build_model(cfg);
    if (mb.kind == ModelKind::multinomial_diffusion) {
        if (!ck.has_schedule) throw std::runtime_error("checkpoint: missing schedule section");
        mb.diff.schedule = ck.schedule;
    }
    std::map<std::string, const Tensor*> have;
    for (const auto& [name, t] : ck.params) have[name] = &t;
    size_t used = 0;
    mb.visit_params([&](const std::string& name, Tensor& t) {
        auto it = have.find(name);
        if (it == have.end()) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (it->second->shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        t = *it->second;
        ++used;
    });
    if (used != ck.params.size()) throw std::runtime_error("checkpoint: file contains unknown parameters");
    return mb;
}

}  // namespace catgen

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "catgen/io.hpp"
#include "catgen/train.hpp"
#include "catgen/verify.hpp"

using namespace catgen;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CategoricalBatch load_or_generate_val(const ModelBundle& mb, const std::string& dataset_path) {
    if (!dataset_path.empty()) {
        DatasetFile f = read_dataset(dataset_path);
        return f.data;
    }
    return make_dataset(mb.config.dataset).val;
}

std::string row_text(const CategoricalBatch& x, int64_t row) {
    if (x.num_classes == 27) return to_text(x, row);
    std::string s;
    for (int64_t d = 0; d < x.dims; ++d) {
        if (d) s += " ";
        s += std::to_string(x.at(row, d));
    }
    return s;
}

int cmd_make_data(const std::string& config_path, const std::string& kind, int k, int length, int64_t n,
                  uint64_t seed, const std::string& out) {
    ToyDatasetSpec spec;
    if (!config_path.empty()) {
        TrainConfig cfg = TrainConfig::parse(slurp(config_path));
        spec = cfg.dataset;
    }
    if (!kind.empty()) {
        if (kind == "eight_gaussians") spec.kind = DatasetKind::eight_gaussians;
        else if (kind == "char_corpus") spec.kind = DatasetKind::char_corpus;
        else throw std::invalid_argument("unknown dataset kind '" + kind + "'");
    }
    if (k > 0) spec.K = k;
    if (length > 0) spec.length = length;
    spec.seed = seed;
    spec.validate();
    Rng rng(seed);
    CategoricalBatch data = generate(spec, n, rng);
    write_dataset(out, data, seed);
    std::cout << "wrote " << n << " samples (K=" << data.num_classes << ", D=" << data.dims << ") to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_path, const std::string& out,
              const std::string& model_override, const std::string& posterior_override, int64_t seed_override,
              int t_override, int iwbo_override) {
    TrainConfig cfg = TrainConfig::parse(slurp(config_path));
    if (!model_override.empty()) cfg.model = model_kind_from(model_override);
    if (!posterior_override.empty()) cfg.posterior = posterior_kind_from(posterior_override);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (t_override > 0) cfg.T = t_override;
    if (iwbo_override > 0) cfg.iwbo_samples = iwbo_override;
    cfg.validate();

    Dataset ds = make_dataset(cfg.dataset);
    if (!dataset_path.empty()) {
        DatasetFile f = read_dataset(dataset_path);
        if (f.data.num_classes != cfg.data_classes() || f.data.dims != cfg.data_dims())
            throw std::invalid_argument("dataset file K/D does not match config");
        ds.train = f.data;
    }

    TrainResult res = train(cfg, ds, &std::cout);
    if (res.non_increasing_flagged)
        std::cout << "warning: smoothed training loss increased during the run\n";

    if (!out.empty()) {
        CsvWriter csv(out + ".metrics.csv", "epoch,split,metric,value");
        for (size_t e = 0; e < res.epoch_loss.size(); ++e) csv.row(e, "train", "loss_nats", res.epoch_loss[e]);
        EvalReport rep = evaluate(res.model, ds.val, "elbo", cfg.iwbo_samples, cfg.eval_seed);
        csv.row(res.epoch_loss.size() ? res.epoch_loss.size() - 1 : 0, "val", "nll_nats", rep.nll_nats);
        csv.row(res.epoch_loss.size() ? res.epoch_loss.size() - 1 : 0, "val", "bpd", rep.bpd);
        std::cout << "val nll " << rep.nll_nats << " nats (" << rep.bpd << " bpd)\n";
        Checkpoint ck = make_checkpoint(res.model, res.rng_state);
        save_checkpoint(out, ck);
        std::cout << "checkpoint written to " << out << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path, const std::string& metric,
             int iwbo_override, int64_t seed_override) {
    ModelBundle mb = restore_model(load_checkpoint(ckpt_path));
    CategoricalBatch data = load_or_generate_val(mb, dataset_path);
    uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : mb.config.eval_seed;
    int S = iwbo_override > 0 ? iwbo_override : mb.config.iwbo_samples;
    EvalReport rep = evaluate(mb, data, metric, S, seed);
    std::cout << "metric " << rep.metric << "\n";
    std::cout << "n " << rep.n << "\n";
    std::cout << "mean_nats " << rep.mean_nats << " +- " << rep.se_nats << "\n";
    std::cout << "nll_nats " << rep.nll_nats << "\n";
    std::cout << "bits_per_dim " << rep.bpd << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, int64_t n, int64_t seed_override, const std::string& out) {
    ModelBundle mb = restore_model(load_checkpoint(ckpt_path));
    uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : 0;
    Rng rng(seed);
    CategoricalBatch s;
    if (mb.kind == ModelKind::multinomial_diffusion) {
        s = ancestral_sample(mb.diff, n, rng);
    } else if (mb.kind == ModelKind::argmax_flow) {
        s = mb.amf.sample(n, rng);
    } else {
        s = CategoricalBatch(n, mb.data_dims(), mb.data_classes());
        for (auto& v : s.values) v = static_cast<int32_t>(rng.below(mb.data_classes()));
    }
    if (out.empty()) {
        for (int64_t b = 0; b < s.batch; ++b) std::cout << row_text(s, b) << "\n";
    } else {
        write_dataset(out, s, seed);
        std::cout << "wrote " << n << " samples to " << out << "\n";
    }
    return 0;
}

int cmd_denoise(const std::string& ckpt_path, const std::string& dataset_path, double rate, int64_t seed_override,
                int64_t show) {
    ModelBundle mb = restore_model(load_checkpoint(ckpt_path));
    if (mb.kind != ModelKind::multinomial_diffusion)
        throw std::invalid_argument("denoise requires a multinomial-diffusion checkpoint");
    CategoricalBatch clean = load_or_generate_val(mb, dataset_path);
    uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : 1;
    Rng rng(seed);
    CategoricalBatch corrupted = corrupt(clean, rate, rng);
    CategoricalBatch restored = denoise_once(mb.diff, corrupted);
    int64_t flips = 0, fixed = 0, broken = 0;
    for (size_t i = 0; i < clean.values.size(); ++i) {
        if (corrupted.values[i] != clean.values[i]) {
            ++flips;
            if (restored.values[i] == clean.values[i]) ++fixed;
        } else if (restored.values[i] != clean.values[i]) {
            ++broken;
        }
    }
    for (int64_t b = 0; b < std::min<int64_t>(show, clean.batch); ++b) {
        std::cout << "original:  " << row_text(clean, b) << "\n";
        std::cout << "corrupted: " << row_text(corrupted, b) << "\n";
        std::cout << "restored:  " << row_text(restored, b) << "\n\n";
    }
    std::cout << "corrupted positions " << flips << ", restored " << fixed;
    if (flips > 0) std::cout << " (" << 100.0 * static_cast<double>(fixed) / static_cast<double>(flips) << "%)";
    std::cout << ", clean positions broken " << broken << "\n";
    return 0;
}

int cmd_pmf(const std::string& ckpt_path, const std::string& dataset_path, const std::string& out, int64_t budget,
            int64_t seed_override) {
    Tensor grid;
    bool have_model = !ckpt_path.empty();
    if (have_model) {
        ModelBundle mb = restore_model(load_checkpoint(ckpt_path));
        uint64_t seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override) : 7;
        grid = model_pmf(mb, budget, seed);
    } else if (!dataset_path.empty()) {
        grid = data_pmf(read_dataset(dataset_path).data);
    } else {
        throw std::invalid_argument("pmf: need --checkpoint or --dataset");
    }
    double total = 0.0;
    for (double v : grid.data) total += v;
    write_csv_grid(out + ".csv", grid);
    write_pgm(out + ".pgm", grid);
    std::cout << "pmf total mass " << total << "; wrote " << out << ".csv and " << out << ".pgm\n";
    if (have_model && !dataset_path.empty())
        std::cout << "tv_distance_to_data " << tv_distance(grid, data_pmf(read_dataset(dataset_path).data)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"categorical generative models: argmax flows and multinomial diffusion"};
    app.require_subcommand(1);

    std::string config_path, dataset_path, out_path, ckpt_path;
    std::string kind, model_override, posterior_override, metric = "elbo";
    int k = 0, length = 0, t_override = 0, iwbo = 0;
    int64_t n = 1000, seed = -1, show = 5;
    double rate = 0.05;
    bool quick = false;

    auto* mk = app.add_subcommand("make-data", "generate a toy dataset file");
    mk->add_option("--config", config_path, "config file supplying the dataset block");
    mk->add_option("--kind", kind, "eight_gaussians or char_corpus");
    mk->add_option("--k", k, "classes per dimension (eight_gaussians)");
    mk->add_option("--length", length, "sequence length (char_corpus)");
    mk->add_option("-n", n, "number of samples");
    mk->add_option("--seed", seed, "generation seed");
    mk->add_option("--out", out_path, "output path")->required();

    auto* tr = app.add_subcommand("train", "train a model from a config file");
    tr->add_option("--config", config_path, "key = value config file")->required();
    tr->add_option("--dataset", dataset_path, "training dataset file (overrides generated data)");
    tr->add_option("--out", out_path, "checkpoint output path");
    tr->add_option("--model", model_override, "argmax-flow or multinomial-diffusion");
    tr->add_option("--posterior", posterior_override, "softplus|gumbel|gumbel-threshold|uniform-deq|variational-deq");
    tr->add_option("--seed", seed, "training seed override");
    tr->add_option("--T", t_override, "diffusion steps override");
    tr->add_option("--iwbo-samples", iwbo, "importance samples for evaluation");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    ev->add_option("--dataset", dataset_path, "dataset file (default: config validation split)");
    ev->add_option("--metric", metric, "elbo, iwbo or bpd");
    ev->add_option("--iwbo-samples", iwbo, "importance samples for iwbo");
    ev->add_option("--seed", seed, "evaluation seed");

    auto* sa = app.add_subcommand("sample", "draw samples from a checkpoint");
    sa->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    sa->add_option("-n", n, "number of samples");
    sa->add_option("--seed", seed, "sampling seed");
    sa->add_option("--out", out_path, "write samples as a dataset file (default: stdout)");

    auto* de = app.add_subcommand("denoise", "corrupt and spell-check with a single reverse step");
    de->add_option("--checkpoint", ckpt_path, "diffusion checkpoint")->required();
    de->add_option("--dataset", dataset_path, "dataset file (default: config validation split)");
    de->add_option("--rate", rate, "corruption rate");
    de->add_option("--seed", seed, "corruption seed");
    de->add_option("-n", show, "number of examples to print");

    auto* pm = app.add_subcommand("pmf", "write a probability-mass grid (D = 2 only)");
    pm->add_option("--checkpoint", ckpt_path, "checkpoint path");
    pm->add_option("--dataset", dataset_path, "dataset file (data pmf)");
    pm->add_option("--out", out_path, "output prefix")->required();
    pm->add_option("-n", n, "sampling budget");
    pm->add_option("--seed", seed, "sampling seed");

    auto* vf = app.add_subcommand("verify", "run the brute-force oracle suite");
    vf->add_flag("--quick", quick, "reduced Monte Carlo sizes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mk->parsed())
            return cmd_make_data(config_path, kind, k, length, n, seed < 0 ? 0 : static_cast<uint64_t>(seed), out_path);
        if (tr->parsed())
            return cmd_train(config_path, dataset_path, out_path, model_override, posterior_override, seed, t_override, iwbo);
        if (ev->parsed()) return cmd_eval(ckpt_path, dataset_path, metric, iwbo, seed);
        if (sa->parsed()) return cmd_sample(ckpt_path, n, seed, out_path);
        if (de->parsed()) return cmd_denoise(ckpt_path, dataset_path, rate, seed, show);
        if (pm->parsed()) return cmd_pmf(ckpt_path, dataset_path, out_path, n, seed);
        if (vf->parsed()) return run_verify_cli(quick);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

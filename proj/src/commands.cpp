#include "cats/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cats/checkpoint.hpp"
#include "cats/experiment.hpp"
#include "cats/metrics.hpp"

namespace fs = std::filesystem;

namespace cats::commands {

namespace {

std::string make_run_dir(const ExperimentConfig& cfg, const std::optional<std::string>& out_override) {
    const std::string dir = out_override ? *out_override : cfg.output.run_dir();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
    // writability probe
    const std::string probe = dir + "/.write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw ConfigError("output directory " + dir + " is not writable");
    }
    fs::remove(probe, ec);
    return dir;
}

void export_attention(const std::string& dir, const ScoreRecorder& rec, const CatsConfig& cfg,
                      std::size_t top_k) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    for (const auto& [key, map] : rec.maps()) {
        std::ostringstream name;
        name << dir << "/layer" << key.layer << "_head" << key.head << ".csv";
        std::ostringstream label;
        label << "layer=" << key.layer << " head=" << key.head << " kind=" << to_string(map.kind);
        write_attention_csv(name.str(), map.mean(), map.rows, map.cols, cfg, label.str());
    }
    const AvgAttention avg = average_attention(rec);
    write_attention_csv(dir + "/averaged.csv", avg.values, avg.rows, avg.cols, cfg, "averaged");
    if (top_k >= 1 && top_k <= avg.values.size()) {
        const auto pairs = top_attention_pairs(avg, top_k);
        std::ofstream out(dir + "/top_pairs.csv");
        out << "rank,query_patch,input_patch,score\n";
        char buf[96];
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g\n", i + 1, pairs[i].query_patch,
                          pairs[i].input_patch, double(pairs[i].score));
            out << buf;
        }
    }
}

ScoreRecorder record_over(const ModelParams& params, const CatsConfig& cfg, const WindowDataset& ds) {
    NoGradGuard no_grad;
    ScoreRecorder rec;
    ForwardOptions opt;
    opt.recorder = &rec;
    const std::size_t M = ds.channels(), L = ds.input_len();
    const std::size_t chunk = 64;
    for (std::size_t b = 0; b < ds.positions(); b += chunk) {
        const std::size_t e = std::min(ds.positions(), b + chunk);
        std::vector<Real> x((e - b) * M * L);
        std::vector<std::size_t> ch((e - b) * M);
        std::size_t r = 0;
        for (std::size_t p = b; p < e; ++p)
            for (std::size_t c = 0; c < M; ++c, ++r) {
                const auto in = ds.input(c, p);
                std::copy(in.begin(), in.end(), x.begin() + r * L);
                ch[r] = c;
            }
        Tensor xt = Tensor::from_vector({(e - b) * M, L}, std::move(x));
        forward(xt, ch, params, cfg, opt);
    }
    return rec;
}

struct TrainedRun {
    ExperimentConfig cfg;
    PreparedData data;
    FitResult fit_result;
    MetricReport test_report;
    bool has_test = false;
};

TrainedRun run_training(ExperimentConfig cfg) {
    TrainedRun run{std::move(cfg), {}, {}, {}, false};
    run.data = prepare_data(run.cfg);
    Rng init_rng(run.cfg.train.seed);
    ModelParams params = ModelParams::init(run.cfg.model, init_rng);
    run.fit_result = fit(params, run.cfg.model, run.data.train, run.data.val, run.cfg.train);
    if (!run.data.test.empty()) {
        EvalOptions eopt;
        eopt.scaler = &run.data.scaler;
        run.test_report = evaluate(run.fit_result.best_params, run.cfg.model, run.data.test, eopt);
        run.has_test = true;
    }
    return run;
}

}  // namespace

int cmd_train(const TrainArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    if (args.seed) cfg.train.seed = *args.seed;
    const std::string dir = make_run_dir(cfg, args.out_dir);

    TrainedRun run = run_training(std::move(cfg));
    save_checkpoint(dir + "/checkpoint.cats", run.cfg.model, run.fit_result.best_params);
    run.fit_result.write_log_csv(dir + "/training_log.csv");
    if (run.has_test) {
        run.test_report.write_kv(dir + "/test_metrics.txt");
        std::ofstream csv(dir + "/test_metrics.csv");
        csv << MetricReport::csv_header() << '\n'
            << run.test_report.csv_row(run.cfg.output.name) << '\n';
    }
    if (args.record_attention) {
        const WindowDataset& source = !run.data.test.empty() ? run.data.test : run.data.train;
        export_attention(dir + "/attention", record_over(run.fit_result.best_params, run.cfg.model, source),
                         run.cfg.model, 2);
    }

    std::cout << "trained " << run.cfg.output.name << ": epochs=" << run.fit_result.log.size()
              << " best_epoch=" << run.fit_result.best_epoch;
    if (run.has_test)
        std::cout << " test_mse=" << double(run.test_report.mse)
                  << " test_mae=" << double(run.test_report.mae);
    std::cout << " -> " << dir << std::endl;
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    auto [ckpt_cfg, params] = load_checkpoint(args.checkpoint_path);
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    cfg.model = ckpt_cfg;
    if (args.horizon) {
        const std::size_t nt_ckpt = build_layout(ckpt_cfg).n_query;
        CatsConfig trial = ckpt_cfg;
        trial.horizon = *args.horizon;
        if (*args.horizon > ckpt_cfg.horizon || build_layout(trial).n_query != nt_ckpt)
            throw CheckpointError("horizon " + std::to_string(*args.horizon) +
                                  " incompatible with checkpoint horizon " +
                                  std::to_string(ckpt_cfg.horizon) + ": queries are horizon-fixed");
        cfg.model.horizon = *args.horizon;
    }
    PreparedData data = prepare_data(cfg);
    if (cfg.model.channels != ckpt_cfg.channels)
        throw CheckpointError("dataset has " + std::to_string(cfg.model.channels) +
                              " channels, checkpoint was built for " +
                              std::to_string(ckpt_cfg.channels));
    if (data.test.empty()) throw ConfigError("evaluation requires a non-empty test split");

    const std::string dir = make_run_dir(cfg, args.out_dir);
    EvalOptions eopt;
    eopt.scaler = &data.scaler;
    const MetricReport rep = evaluate(params, cfg.model, data.test, eopt);
    rep.write_kv(dir + "/eval_metrics.txt");
    std::ofstream csv(dir + "/eval_metrics.csv");
    csv << MetricReport::csv_header() << '\n' << rep.csv_row(cfg.output.name) << '\n';
    std::cout << "eval " << cfg.output.name << ": mse=" << double(rep.mse)
              << " mae=" << double(rep.mae) << " windows=" << rep.window_count << " -> " << dir
              << std::endl;
    return 0;
}

int cmd_count_params(const CountParamsArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    std::vector<std::size_t> horizons =
        args.horizons.empty() ? std::vector<std::size_t>{96, 192, 336, 720} : args.horizons;
    std::cout << "T,query_params,positional_params,other_params,total,delta_total\n";
    std::size_t prev_total = 0;
    bool first = true;
    for (std::size_t T : horizons) {
        CatsConfig c = cfg.model;
        c.horizon = T;
        const ParamBreakdown b = count_parameters(c);
        std::cout << T << ',' << b.query << ',' << b.positional << ',' << b.other << ',' << b.total();
        if (first)
            std::cout << ",";
        else
            std::cout << "," << (long long)b.total() - (long long)prev_total;
        std::cout << '\n';
        prev_total = b.total();
        first = false;
    }
    return 0;
}

int cmd_attention(const AttentionArgs& args) {
    auto [ckpt_cfg, params] = load_checkpoint(args.checkpoint_path);
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    cfg.model = ckpt_cfg;
    PreparedData data = prepare_data(cfg);
    if (cfg.model.channels != ckpt_cfg.channels)
        throw CheckpointError("dataset channels do not match checkpoint");
    const WindowDataset& ds = !data.test.empty() ? data.test : data.train;
    if (args.window_index >= ds.positions())
        throw ConfigError("window index " + std::to_string(args.window_index) + " out of range (" +
                          std::to_string(ds.positions()) + " windows)");

    NoGradGuard no_grad;
    ScoreRecorder rec;
    ForwardOptions opt;
    opt.recorder = &rec;
    const std::size_t M = ds.channels(), L = ds.input_len();
    std::vector<Real> x(M * L);
    std::vector<std::size_t> ch(M);
    for (std::size_t c = 0; c < M; ++c) {
        const auto in = ds.input(c, args.window_index);
        std::copy(in.begin(), in.end(), x.begin() + c * L);
        ch[c] = c;
    }
    forward(Tensor::from_vector({M, L}, std::move(x)), ch, params, cfg.model, opt);

    const std::string dir = make_run_dir(cfg, args.out_dir);
    export_attention(dir + "/attention", rec, cfg.model, args.top_k);
    std::cout << "attention maps for window " << args.window_index << " -> " << dir << "/attention"
              << std::endl;
    return 0;
}

int cmd_bench(const BenchArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    if (args.iterations < 1) throw ConfigError("bench: iterations must be >= 1");
    const EfficiencyReport rep =
        measure_efficiency(cfg.model, args.iterations, cfg.train.batch_size, cfg.train.seed);
    const std::string dir = make_run_dir(cfg, args.out_dir);
    rep.write_kv(dir + "/efficiency.txt");
    std::ofstream csv(dir + "/efficiency.csv");
    csv << EfficiencyReport::csv_header() << '\n' << rep.csv_row(cfg.output.name) << '\n';
    std::cout << "bench " << cfg.output.name << ": params=" << rep.param_total
              << " peak_elements=" << rep.peak_live_elements
              << " mean_iter_s=" << rep.mean_iter_seconds << " -> " << dir << std::endl;
    return 0;
}

int cmd_synth(const SynthArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    if (cfg.dataset.kind != DatasetBlock::Kind::Synthetic)
        throw ConfigError("synth: config must describe a synthetic dataset");
    const SeriesTable t = compose_toy_series(cfg.dataset.synthetic);
    save_csv(t, args.out_path);
    std::cout << "synthetic series: " << t.steps() << " steps -> " << args.out_path << std::endl;
    return 0;
}

int cmd_ablate(const AblateArgs& args) {
    ExperimentConfig base = ExperimentConfig::load(args.config_path);
    if (args.seed) base.train.seed = *args.seed;

    std::vector<std::vector<AttentionKind>> variants;
    if (args.kinds.empty()) {
        // zero / one / two self-attention replacements, self layers first
        for (std::size_t n_self = 0; n_self + 1 <= base.model.layers && n_self <= 2; ++n_self) {
            std::vector<AttentionKind> kinds(base.model.layers, AttentionKind::Cross);
            for (std::size_t i = 0; i < n_self; ++i) kinds[i] = AttentionKind::Self;
            variants.push_back(std::move(kinds));
        }
    } else {
        std::istringstream vs(args.kinds);
        std::string variant;
        while (std::getline(vs, variant, ';')) {
            std::vector<AttentionKind> kinds;
            std::istringstream ks(variant);
            std::string tok;
            while (std::getline(ks, tok, ','))
                if (!tok.empty()) kinds.push_back(attention_kind_from_string(tok));
            if (kinds.size() != base.model.layers)
                throw ConfigError("ablate: variant '" + variant + "' has " +
                                  std::to_string(kinds.size()) + " kinds for " +
                                  std::to_string(base.model.layers) + " layers");
            variants.push_back(std::move(kinds));
        }
        if (variants.empty()) throw ConfigError("ablate: no variants parsed from --kinds");
    }

    const std::string dir = make_run_dir(base, args.out_dir);
    std::ofstream table(dir + "/ablation.csv");
    table << "variant,self_layers,kinds,test_mse,test_mae,final_train_loss\n";
    std::cout << "variant,kinds,test_mse,test_mae\n";
    for (const auto& kinds : variants) {
        ExperimentConfig cfg = base;
        cfg.model.attention_kinds = kinds;
        const std::size_t n_self =
            static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), AttentionKind::Self));
        std::ostringstream kind_str;
        for (std::size_t i = 0; i < kinds.size(); ++i)
            kind_str << (i ? "+" : "") << to_string(kinds[i]);
        static const char* kLabels[] = {"zero_sa", "one_sa", "two_sa"};
        const std::string label =
            n_self < 3 ? kLabels[n_self] : std::to_string(n_self) + "_sa";

        TrainedRun run = run_training(std::move(cfg));
        const Real final_train = run.fit_result.log.empty() ? Real(0) : run.fit_result.log.back().train_loss;
        char buf[160];
        if (run.has_test) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%s,%.17g,%.17g,%.17g\n", label.c_str(), n_self,
                          kind_str.str().c_str(), double(run.test_report.mse),
                          double(run.test_report.mae), double(final_train));
            table << buf;
            std::cout << label << ',' << kind_str.str() << ',' << double(run.test_report.mse) << ','
                      << double(run.test_report.mae) << std::endl;
        } else {
            std::snprintf(buf, sizeof buf, "%s,%zu,%s,,,%.17g\n", label.c_str(), n_self,
                          kind_str.str().c_str(), double(final_train));
            table << buf;
            std::cout << label << ',' << kind_str.str() << ",," << std::endl;
        }
    }
    std::cout << "ablation table -> " << dir << "/ablation.csv" << std::endl;
    return 0;
}

}  // namespace cats::commands

// dlite: distill large multichannel time-series datasets into small,
// representative subsets.
//
// Subcommands:
//   train-compressor  fit the shared multi-view autoencoder on an input root
//   distill           score, filter, and select each dataset pair
//   export            materialize a selection manifest as a new dataset pair
//   bench             synthetic end-to-end benchmark
//
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "dlite/errors.hpp"
#include "dlite/pipeline.hpp"

namespace {

struct CliArgs {
    // train-compressor
    dlite::pipeline::TrainOptions train;
    // distill
    dlite::pipeline::DistillCmdOptions distill;
    std::string distill_strategy = "proposed";
    bool no_scores = false;
    // export
    std::string export_manifest, export_input, export_out;
    // bench
    std::string bench_spec, bench_out;
    std::int64_t bench_seeds = 5;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dataset distillation for multichannel segment collections"};
    app.require_subcommand(1);
    CliArgs args;

    auto* train = app.add_subcommand("train-compressor",
                                     "train the shared multi-view compressor on an input root");
    std::string train_input, train_out;
    train->add_option("--input", train_input, "input root holding dataset pairs")->required();
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--seed", args.train.config.seed, "root seed");
    train->add_option("--epochs", args.train.config.epochs, "training epochs");
    train->add_option("--batch-size", args.train.config.batch_size, "mini-batch size");
    train->add_option("--d-latent", args.train.config.d_latent, "latent width");
    train->add_option("--enc-layers", args.train.config.enc_layers, "encoder depth");
    train->add_option("--dec-layers", args.train.config.dec_layers, "decoder depth");
    train->add_option("--heads", args.train.config.heads, "attention heads");
    train->add_option("--patches", args.train.config.num_patches, "patches per view");
    train->add_option("--beta", args.train.config.beta, "discrimination loss weight");
    train->add_option("--lr", args.train.config.base_lr, "base learning rate");
    train->add_option("--clip-norm", args.train.config.clip_norm, "gradient clip norm");

    auto* distill = app.add_subcommand("distill", "select a subset from each dataset pair");
    std::string distill_input, distill_ckpt, distill_out;
    distill->add_option("--input", distill_input, "input root holding dataset pairs")->required();
    distill->add_option("--ckpt", distill_ckpt, "compressor checkpoint (strategy=proposed)");
    distill->add_option("--out", distill_out, "output directory")->required();
    distill->add_option("--eta", args.distill.eta, "percent of segments to keep");
    distill->add_option("--tau", args.distill.tau, "percent of highest-OOD segments to drop");
    distill->add_option("--strategy", args.distill_strategy, "proposed|random|pca_ds");
    distill->add_option("--seed", args.distill.seed, "root seed");
    distill->add_option("--bins", args.distill.bins, "histogram bins (0 = sqrt rule)");
    distill->add_option("--alpha", args.distill.alpha, "histogram smoothing");
    distill->add_option("--pca-dim", args.distill.pca_dim, "embedding width for pca_ds");
    distill->add_flag("--no-scores", args.no_scores, "skip per-segment score CSVs");

    auto* exp = app.add_subcommand("export", "write selected segments as a new dataset pair");
    exp->add_option("--manifest", args.export_manifest, "selection manifest JSON")->required();
    exp->add_option("--input", args.export_input, "source dataset pair")->required();
    exp->add_option("--out", args.export_out, "output dataset pair")->required();

    auto* bench = app.add_subcommand("bench", "synthetic benchmark across strategies");
    bench->add_option("--spec", args.bench_spec, "benchmark spec JSON")->required();
    bench->add_option("--out", args.bench_out, "results CSV path")->required();
    bench->add_option("--seeds", args.bench_seeds, "number of repetitions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            args.train.input_root = train_input;
            args.train.out_ckpt = train_out;
            dlite::pipeline::cmd_train_compressor(args.train);
            std::printf("checkpoint written to %s\n", train_out.c_str());
        } else if (distill->parsed()) {
            args.distill.input_root = distill_input;
            args.distill.ckpt = distill_ckpt;
            args.distill.out_root = distill_out;
            args.distill.strategy = dlite::pipeline::strategy_from_string(args.distill_strategy);
            args.distill.write_scores = !args.no_scores;
            const auto rows = dlite::pipeline::cmd_distill(args.distill);
            for (const auto& r : rows)
                std::printf("%s: n=%lld kept=%lld selected=%lld radius=%g\n",
                            r.dataset_id.c_str(), static_cast<long long>(r.n),
                            static_cast<long long>(r.kept), static_cast<long long>(r.selected),
                            r.coverage_radius);
        } else if (exp->parsed()) {
            dlite::pipeline::cmd_export(args.export_manifest, args.export_input, args.export_out);
            std::printf("exported to %s\n", args.export_out.c_str());
        } else if (bench->parsed()) {
            dlite::pipeline::cmd_bench(args.bench_spec, args.bench_out, args.bench_seeds);
            std::printf("results written to %s\n", args.bench_out.c_str());
        }
    } catch (const dlite::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const dlite::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dlite::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlite/bench.hpp"
#include "dlite/hash.hpp"
#include "dlite/pipeline.hpp"
#include "dlite/synth.hpp"
#include "support/test_util.hpp"

using namespace dlite;
namespace fs = std::filesystem;

namespace {

// Two small dataset pairs under one root.
void make_root(const fs::path& root, std::int64_t channels = 2) {
    synth::SynthSpec spec;
    spec.n_subjects = 3;
    spec.segments_per_subject = 20;
    spec.channels = channels;
    spec.samples = 64;
    spec.classes = 3;
    spec.noise_sigma = 0.4;
    spec.artifact_rate = 0.02;
    for (int pair = 0; pair < 2; ++pair) {
        spec.seed = 100 + pair;
        auto data = synth::generate(spec);
        data.set.dataset_id = "pair" + std::to_string(pair);
        signal::write_segment_set(root / ("pair" + std::to_string(pair)), data.set);
    }
}

compressor::CompressorConfig tiny_config() {
    compressor::CompressorConfig cfg;
    cfg.d_latent = 16;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.heads = 2;
    cfg.num_patches = 4;
    cfg.conv_channels = 4;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 21;
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pair discovery") {
    testutil::TempDir dir("discover");
    make_root(dir.path() / "root");
    const auto pairs = pipeline::discover_pairs(dir.path() / "root");
    CHECK(pairs.size() == 2);
    CHECK(pairs[0].filename() == "pair0");
    CHECK_THROWS_AS(pipeline::discover_pairs(dir.path() / "missing"), UsageError);
    fs::create_directories(dir.path() / "empty");
    CHECK_THROWS_AS(pipeline::discover_pairs(dir.path() / "empty"), UsageError);
}

TEST_CASE("train-compressor then distill end to end") {
    testutil::TempDir dir("e2e");
    const auto root = dir.path() / "root";
    make_root(root);

    pipeline::TrainOptions topt;
    topt.input_root = root;
    topt.out_ckpt = dir.path() / "model.ckpt";
    topt.config = tiny_config();
    pipeline::cmd_train_compressor(topt);

    CHECK(fs::exists(dir.path() / "model.ckpt"));
    CHECK(fs::exists(dir.path() / "model.ckpt.log.csv"));
    CHECK(fs::exists(dir.path() / "model.ckpt.run.json"));

    SECTION("training reruns reproduce the checkpoint hash") {
        const auto h1 = hash_file(dir.path() / "model.ckpt");
        pipeline::TrainOptions again = topt;
        again.out_ckpt = dir.path() / "model2.ckpt";
        pipeline::cmd_train_compressor(again);
        CHECK(hash_file(dir.path() / "model2.ckpt") == h1);
    }

    SECTION("distill writes manifests, scores, summary, and run.json") {
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = root;
        dopt.ckpt = topt.out_ckpt;
        dopt.out_root = dir.path() / "out";
        dopt.strategy = pipeline::Strategy::kProposed;
        dopt.eta = 10.0;
        dopt.tau = 2.0;
        const auto rows = pipeline::cmd_distill(dopt);
        REQUIRE(rows.size() == 2);
        for (const auto& r : rows) {
            CHECK(r.n == 60);
            CHECK(r.kept == 58);  // ceil(2% of 60) = 2 dropped
            CHECK(r.selected == 6);
            CHECK(!r.per_subject.empty());
        }
        CHECK(fs::exists(dir.path() / "out" / "pair0" / "manifest.json"));
        CHECK(fs::exists(dir.path() / "out" / "pair0" / "scores.csv"));
        CHECK(fs::exists(dir.path() / "out" / "summary.csv"));
        CHECK(fs::exists(dir.path() / "out" / "run.json"));

        // a rerun with the identical resolved config overwrites every
        // output with identical bytes
        const auto manifest_bytes = file_bytes(dir.path() / "out" / "pair0" / "manifest.json");
        const auto summary_bytes = file_bytes(dir.path() / "out" / "summary.csv");
        const auto run_bytes = file_bytes(dir.path() / "out" / "run.json");
        pipeline::cmd_distill(dopt);
        CHECK(file_bytes(dir.path() / "out" / "pair0" / "manifest.json") == manifest_bytes);
        CHECK(file_bytes(dir.path() / "out" / "summary.csv") == summary_bytes);
        CHECK(file_bytes(dir.path() / "out" / "run.json") == run_bytes);
    }

    SECTION("checkpoint trained on different channel count is a config error") {
        testutil::TempDir dir3("mismatch");
        make_root(dir3.path() / "root3", 3);
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = dir3.path() / "root3";
        dopt.ckpt = topt.out_ckpt;
        dopt.out_root = dir3.path() / "out";
        dopt.strategy = pipeline::Strategy::kProposed;
        CHECK_THROWS_AS(pipeline::cmd_distill(dopt), ConfigError);
    }
}

TEST_CASE("strategies that bypass the compressor") {
    testutil::TempDir dir("strategies");
    const auto root = dir.path() / "root";
    make_root(root);

    SECTION("random needs no checkpoint and reports no radius") {
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = root;
        dopt.out_root = dir.path() / "rnd";
        dopt.strategy = pipeline::Strategy::kRandom;
        dopt.eta = 25.0;
        const auto rows = pipeline::cmd_distill(dopt);
        for (const auto& r : rows) {
            CHECK(r.kept == 60);
            CHECK(r.selected == 15);
            CHECK(r.coverage_radius == -1.0);
        }
    }
    SECTION("pca_ds runs the same selection machinery on PCA latents") {
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = root;
        dopt.out_root = dir.path() / "pca";
        dopt.strategy = pipeline::Strategy::kPcaDs;
        dopt.eta = 10.0;
        dopt.tau = 2.0;
        dopt.pca_dim = 8;
        const auto rows = pipeline::cmd_distill(dopt);
        for (const auto& r : rows) {
            CHECK(r.kept == 58);
            CHECK(r.selected == 6);
            CHECK(r.coverage_radius > 0.0);
        }
    }
    SECTION("proposed without a checkpoint is a usage error") {
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = root;
        dopt.out_root = dir.path() / "nockpt";
        dopt.strategy = pipeline::Strategy::kProposed;
        CHECK_THROWS_AS(pipeline::cmd_distill(dopt), UsageError);
    }
}

TEST_CASE("export") {
    testutil::TempDir dir("export");
    const auto root = dir.path() / "root";
    make_root(root);
    const auto pair = root / "pair0";
    const auto set = signal::load_segment_set(pair);

    SECTION("an everything-selected manifest reproduces data.bin byte for byte") {
        pipeline::DistillCmdOptions dopt;
        dopt.input_root = root;
        dopt.out_root = dir.path() / "full";
        dopt.strategy = pipeline::Strategy::kRandom;
        dopt.eta = 100.0;
        pipeline::cmd_distill(dopt);
        pipeline::cmd_export(dir.path() / "full" / "pair0" / "manifest.json", pair,
                             dir.path() / "export_full");
        CHECK(file_bytes(pair / "data.bin") ==
              file_bytes(dir.path() / "export_full" / "data.bin"));
    }

    SECTION("a partial export matches the in-memory subset after reload") {
        distill::SelectionManifest m;
        m.dataset_id = set.dataset_id;
        m.selected = {5, 2, 9};
        m.kept_after_ood = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        m.eta = 30.0;
        distill::write_manifest(dir.path() / "partial.json", m);
        pipeline::cmd_export(dir.path() / "partial.json", pair, dir.path() / "export_part");
        const auto sub = signal::load_segment_set(dir.path() / "export_part");
        REQUIRE(sub.n == 3);
        // original relative order: 2, 5, 9
        const auto expect = set.subset({2, 5, 9});
        CHECK(sub.data == expect.data);
        CHECK(sub.subject_ids == expect.subject_ids);
    }

    SECTION("out-of-range indices are an integrity error") {
        distill::SelectionManifest m;
        m.dataset_id = set.dataset_id;
        m.selected = {0, 600};
        m.kept_after_ood = {0};
        distill::write_manifest(dir.path() / "bad.json", m);
        CHECK_THROWS_AS(
            pipeline::cmd_export(dir.path() / "bad.json", pair, dir.path() / "export_bad"),
            IntegrityError);
    }
}

TEST_CASE("thread cap honors DLITE_THREADS") {
    setenv("DLITE_THREADS", "3", 1);
    CHECK(pipeline::max_threads() == 3);
    setenv("DLITE_THREADS", "0", 1);
    CHECK(pipeline::max_threads() >= 1);
    unsetenv("DLITE_THREADS");
    CHECK(pipeline::max_threads() >= 1);
}

TEST_CASE("bench runs a miniature grid deterministically") {
    synth::BenchSpec spec;
    spec.synth.n_subjects = 3;
    spec.synth.segments_per_subject = 60;
    spec.synth.channels = 2;
    spec.synth.samples = 64;
    spec.synth.classes = 3;
    spec.synth.noise_sigma = 0.6;
    spec.synth.seed = 5;
    spec.train_limit = 96;
    spec.etas = {5.0, 25.0};
    spec.strategies = {"proposed", "random"};
    spec.comp = tiny_config();

    const auto cells = synth::run_bench(spec, 2, 1);
    REQUIRE(cells.size() == 2 * 2 * 2);
    for (const auto& c : cells) {
        CHECK(c.accuracy >= 0.0);
        CHECK(c.accuracy <= 1.0);
        CHECK(c.coverage_radius > 0.0);
        CHECK(c.ood_recall >= 0.0);
        CHECK(!c.config_hash.empty());
    }
    const auto csv1 = synth::bench_csv(cells);
    const auto csv2 = synth::bench_csv(synth::run_bench(spec, 2, 1));
    CHECK(csv1 == csv2);
    CHECK(csv1.rfind("strategy,eta,seed,accuracy,coverage_radius,ood_recall,config_hash\n", 0) ==
          0);
}

#ifdef DLITE_BIN
TEST_CASE("CLI exit codes") {
    testutil::TempDir dir("cli");
    const std::string bin = DLITE_BIN;
    // usage error: missing input directory
    const int missing = std::system(
        (bin + " distill --input " + (dir.path() / "nope").string() + " --out " +
         (dir.path() / "out").string() + " --strategy random > /dev/null 2>&1")
            .c_str());
    CHECK(WEXITSTATUS(missing) == 2);
    // unknown flag
    const int badflag = std::system((bin + " distill --nonsense > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(badflag) == 2);
    // help is success
    const int help = std::system((bin + " --help > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(help) == 0);
    // happy path: random strategy end to end through the binary
    make_root(dir.path() / "root");
    const int ok = std::system((bin + " distill --input " + (dir.path() / "root").string() +
                                " --out " + (dir.path() / "out").string() +
                                " --strategy random --eta 10 > /dev/null 2>&1")
                                   .c_str());
    CHECK(WEXITSTATUS(ok) == 0);
}
#endif

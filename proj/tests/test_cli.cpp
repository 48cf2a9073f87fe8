#include <doctest.h>

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "dmvfc/encoders.hpp"
#include "dmvfc/pretrain.hpp"
#include "helpers.hpp"

using namespace dmvfc;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dmvfc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("synth then eval against the truth gives ARI 1") {
    testing::TempDir dir("cli_synth");
    REQUIRE(run_cli({"synth", "--G", "4", "--F", "2", "--n", "400", "--seed", "7", "--out", dir / "b.dmvf", "--truth",
                 dir / "t.csv"}).code == 0);
    const Run r = run_cli({"eval", "--bundle", dir / "b.dmvf", "--labels", dir / "t.csv", "--out", dir / "e.json"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(testing::slurp(dir / "e.json"));
    CHECK(j["ari"] == 1.0);
    CHECK(j["n_clusters_nonempty"] == 8);
    CHECK(j["header"].get<std::string>().rfind("dmvfc ", 0) == 0);
    CHECK(testing::slurp(dir / "b.dmvf.meta").find("seeds=seed:7") != std::string::npos);
}

TEST_CASE("pretrain with zero epochs writes the fresh weights") {
    testing::TempDir dir("cli_pre");
    REQUIRE(run_cli({"synth", "--n", "40", "--out", dir / "b.dmvf"}).code == 0);
    REQUIRE(run_cli({"pretrain", "--bundle", dir / "b.dmvf", "--view", "geo", "--epochs", "0", "--seed", "4", "--out",
                 dir / "w.dmwt"}).code == 0);
    PretrainConfig c;
    c.seed = 4;
    save_weights(initial_weights(load_bundle(dir / "b.dmvf"), View::Geometric, c), dir / "fresh.dmwt");
    CHECK(testing::slurp(dir / "w.dmwt") == testing::slurp(dir / "fresh.dmwt"));
}

TEST_CASE("unknown flags, bad config keys and missing files fail loudly") {
    testing::TempDir dir("cli_err");
    Run r = run_cli({"synth", "--out", dir / "b.dmvf", "--no-such-flag"});
    CHECK(r.code != 0);
    CHECK_FALSE(r.err.empty());
    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "seed = 3\nnot_an_option = 1\n";
    }
    r = run_cli({"synth", "--config", dir / "bad.cfg", "--out", dir / "b.dmvf"});
    CHECK(r.code != 0);
    CHECK(r.err.find("not_an_option") != std::string::npos);
    r = run_cli({"eval", "--bundle", dir / "missing.dmvf", "--labels", dir / "missing.csv"});
    CHECK(r.code != 0);
    CHECK(r.err.find("missing.dmvf") != std::string::npos);
    CHECK(run_cli({"frobnicate"}).code != 0);
    CHECK(run_cli({}).code != 0);
}

TEST_CASE("config file values sit between defaults and flags") {
    testing::TempDir dir("cli_cfg");
    {
        std::ofstream cfg(dir / "s.cfg");
        cfg << "# comment\nn = 24\nseed = 5  # trailing comment\nsigma-geo = 0.25\n";
    }
    REQUIRE(run_cli({"synth", "--config", dir / "s.cfg", "--out", dir / "a.dmvf"}).code == 0);
    REQUIRE(run_cli({"synth", "--n", "24", "--seed", "5", "--sigma-geo", "0.25", "--out", dir / "b.dmvf"}).code == 0);
    CHECK(testing::slurp(dir / "a.dmvf") == testing::slurp(dir / "b.dmvf"));
    CHECK(testing::slurp(dir / "a.dmvf.meta") == testing::slurp(dir / "b.dmvf.meta"));
    REQUIRE(run_cli({"synth", "--config", dir / "s.cfg", "--seed", "6", "--out", dir / "c.dmvf"}).code == 0);
    CHECK(load_bundle(dir / "c.dmvf").size() == 24);
    CHECK(testing::slurp(dir / "c.dmvf.meta").find("seeds=seed:6") != std::string::npos);
}

TEST_CASE("help lists every flag of a subcommand") {
    const Run r = run_cli({"infer", "--help"});
    CHECK(r.code == 0);
    for (const char* flag : {"--bundle", "--geo-weights", "--model", "--fa-weight", "--single-pass", "--labels", "--q",
                             "--embeddings", "--model-out", "--config"})
        CHECK(r.out.find(flag) != std::string::npos);
}

TEST_CASE("a small pipeline is byte-for-byte reproducible") {
    testing::TempDir dir("cli_pipe");
    // Input paths are part of the hashed configuration, so both runs use the
    // same directory and the first run's files are set aside.
    auto pipeline = [&] {
        const std::string p = dir / "run_";
        REQUIRE(run_cli({"synth", "--n", "48", "--seed", "3", "--out", p + "b.dmvf"}).code == 0);
        REQUIRE(run_cli({"synth", "--n", "48", "--seed", "4", "--out", p + "b2.dmvf"}).code == 0);
        REQUIRE(run_cli({"pretrain", "--bundle", p + "b.dmvf", "--epochs", "2", "--batch", "16", "--out", p + "g.dmwt",
                     "--history", p + "gh.csv", "--checkpoint-every", "0"}).code == 0);
        REQUIRE(run_cli({"pretrain", "--bundle", p + "b.dmvf", "--view", "func", "--epochs", "2", "--batch", "16", "--out",
                     p + "f.dmwt", "--checkpoint-every", "0"}).code == 0);
        REQUIRE(run_cli({"finetune", "--bundle", p + "b.dmvf", "--geo-weights", p + "g.dmwt", "--func-weights", p + "f.dmwt",
                     "--k", "4", "--epochs", "2", "--batch", "16", "--out-geo", p + "g2.dmwt", "--out-func", p + "f2.dmwt",
                     "--out-model", p + "m.dmcm", "--history", p + "fh.csv"}).code == 0);
        REQUIRE(run_cli({"infer", "--bundle", p + "b.dmvf", "--geo-weights", p + "g2.dmwt", "--model", p + "m.dmcm",
                     "--labels", p + "l.csv", "--q", p + "q.csv", "--embeddings", p + "z.csv"}).code == 0);
        REQUIRE(run_cli({"infer", "--bundle", p + "b2.dmvf", "--geo-weights", p + "g2.dmwt", "--model", p + "m.dmcm",
                     "--labels", p + "l2.csv"}).code == 0);
        REQUIRE(run_cli({"eval", "--bundle", p + "b.dmvf", "--labels", p + "l.csv", "--out", p + "e.json"}).code == 0);
        REQUIRE(run_cli({"baseline", "--bundle", p + "b.dmvf", "--out", p + "qb.csv"}).code == 0);
        REQUIRE(run_cli({"consistency", "--bundles", p + "b.dmvf", p + "b2.dmvf", "--labels", p + "l.csv", p + "l2.csv",
                     "--out", p + "c.csv"}).code == 0);
    };
    pipeline();
    std::map<std::string, std::string> first;
    for (const auto& entry : std::filesystem::directory_iterator(dir.path()))
        first[entry.path().filename().string()] = testing::slurp(entry.path().string());
    for (const auto& entry : std::filesystem::directory_iterator(dir.path())) std::filesystem::remove(entry.path());
    pipeline();
    int compared = 0;
    for (const auto& [name, bytes] : first) {
        INFO(name);
        CHECK(bytes == testing::slurp(dir / name));
        ++compared;
    }
    CHECK(compared >= 20);
}

TEST_CASE("gradcheck subcommand reports and passes") {
    testing::TempDir dir("cli_gc");
    const Run r = run_cli({"gradcheck", "--instances", "1", "--entries", "2", "--out", dir / "g.json"});
    CHECK(r.code == 0);
    CHECK(r.out.find("max relative error") != std::string::npos);
    const auto j = nlohmann::json::parse(testing::slurp(dir / "g.json"));
    CHECK(j["losses"].size() == 4);
}

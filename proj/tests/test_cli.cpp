#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "patchgt/graph.hpp"
#include "patchgt/synthetic.hpp"

using namespace patchgt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path d = fs::temp_directory_path() / (std::string("patchgt_cli_") + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the installed binary through the shell; temp paths carry no spaces so
// plain concatenation is safe. Stderr folds into the captured stream.
int run_cli(const std::string& args, const fs::path& dir, std::string* output = nullptr) {
    static int counter = 0;
    const fs::path cap = dir / ("cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(PATCHGT_CLI_BIN) + " " + args + " > " +
                            cap.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) *output = slurp(cap);
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

Graph cycle(int n) {
    Graph g;
    g.num_nodes = n;
    for (int i = 0; i < n; ++i) g.edges.push_back({std::min(i, (i + 1) % n),
                                                   std::max(i, (i + 1) % n)});
    canonicalize_edges(g.edges);
    g.node_features.assign(n, {1.0});
    return g;
}

Graph two_triangles() {
    Graph g;
    g.num_nodes = 6;
    g.edges = {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}};
    g.node_features.assign(6, {1.0});
    return g;
}

std::string save_single(const Graph& g, const fs::path& path) {
    Dataset ds;
    ds.name = path.stem().string();
    ds.graphs = {g};
    ds.num_tasks = 0;
    save_json_graphs(ds, path.string());
    return path.string();
}

std::string write_config(const fs::path& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
    return path.string();
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("segment reports the component count and writes a default manifest") {
    fs::path dir = temp_dir("segment");
    std::string data = save_single(two_triangles(), dir / "twotri.json");
    std::string out = (dir / "seg.json").string();

    std::string text;
    CHECK(run_cli("segment --data " + data + " --gamma 0.1 --out " + out, dir, &text) == 0);
    CHECK(text.find("mean k 2.000") != std::string::npos);

    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j["gamma"].get<double>() == 0.1);
    CHECK(j["graphs"].size() == 1);
    CHECK(j["graphs"][0]["k"].get<int>() == 2);
    CHECK(j["graphs"][0]["assignment"].size() == 6);

    auto manifest = nlohmann::json::parse(slurp(out + ".manifest.json"));
    const auto& cmd = manifest["command"];
    CHECK(cmd[0].get<std::string>() == "segment");
    // Defaults are resolved into the stored command.
    CHECK(std::find(cmd.begin(), cmd.end(), nlohmann::json("--jobs")) != cmd.end());
}

TEST_CASE("wl-compare prints the verdict and both color histograms") {
    fs::path dir = temp_dir("wl");
    std::string a = save_single(cycle(6), dir / "c6.json");
    std::string b = save_single(two_triangles(), dir / "tri2.json");

    std::string text;
    CHECK(run_cli("wl-compare --a " + a + " --b " + b, dir, &text) == 0);
    CHECK(text.find("distinguishable: false\n") != std::string::npos);
    CHECK(text.find("histogram_a: {\"0\":6}") != std::string::npos);
    CHECK(text.find("histogram_b: {\"0\":6}") != std::string::npos);

    // A path never matches a cycle under refinement: endpoint degrees differ.
    std::string p = save_single([&] {
        Graph g;
        g.num_nodes = 6;
        for (int i = 0; i < 5; ++i) g.edges.push_back({i, i + 1});
        g.node_features.assign(6, {1.0});
        return g;
    }(), dir / "p6.json");
    CHECK(run_cli("wl-compare --a " + a + " --b " + p, dir, &text) == 0);
    CHECK(text.find("distinguishable: true\n") != std::string::npos);
}

TEST_CASE("usage problems exit 2, runtime failures exit 1") {
    fs::path dir = temp_dir("codes");
    std::string text;
    CHECK(run_cli("frobnicate", dir, &text) == 2);
    CHECK(run_cli("", dir, &text) == 2);  // a subcommand is required
    CHECK(run_cli("segment --data x.json --out y.json --bogus 1", dir, &text) == 2);
    CHECK(run_cli("segment --out y.json", dir, &text) == 2);  // --data is required
    CHECK(run_cli("--help", dir, &text) == 0);
    CHECK(text.find("segment") != std::string::npos);

    CHECK(run_cli("segment --data " + (dir / "absent.json").string() + " --out " +
                      (dir / "y.json").string(),
                  dir, &text) == 1);
    CHECK(text.find("error:") != std::string::npos);

    std::ofstream(dir / "garbage.json") << "not json";
    CHECK(run_cli("wl-compare --a " + (dir / "garbage.json").string() + " --b " +
                      (dir / "garbage.json").string(),
                  dir, &text) == 1);
    CHECK(run_cli("replay " + (dir / "no_manifest.json").string(), dir, &text) == 1);
    CHECK(run_cli("replay", dir, &text) == 2);
}

TEST_CASE("replay reproduces the original output byte for byte") {
    fs::path dir = temp_dir("replay");
    std::string data = save_single(two_triangles(), dir / "g.json");
    std::string out = (dir / "seg.json").string();

    CHECK(run_cli("segment --data " + data + " --gamma 0.4 --out " + out, dir) == 0);
    const std::string first = slurp(out);
    const std::string manifest_first = slurp(out + ".manifest.json");
    fs::remove(out);

    CHECK(run_cli("replay " + out + ".manifest.json", dir) == 0);
    CHECK(slurp(out) == first);
    // The stored command names its own manifest path, so even that file
    // rewrites identically.
    CHECK(slurp(out + ".manifest.json") == manifest_first);
}

TEST_CASE("manifest with a tampered command array is rejected") {
    fs::path dir = temp_dir("badmanifest");
    std::ofstream(dir / "m1.json") << "{\"command\": \"segment\"}";
    std::string text;
    CHECK(run_cli("replay " + (dir / "m1.json").string(), dir, &text) == 1);
    CHECK(text.find("command array") != std::string::npos);

    std::ofstream(dir / "m2.json") << "{\"command\": [\"segment\", 3]}";
    CHECK(run_cli("replay " + (dir / "m2.json").string(), dir, &text) == 1);

    // A manifest that replays itself must stop instead of looping.
    std::ofstream(dir / "loop.json")
        << "{\"command\": [\"replay\", \"" << (dir / "loop.json").string() << "\"]}";
    CHECK(run_cli("replay " + (dir / "loop.json").string(), dir, &text) == 1);
    CHECK(text.find("too deep") != std::string::npos);
}

TEST_CASE("train, eval, and attention-export run a tiny corpus end to end") {
    fs::path dir = temp_dir("train");
    Dataset ds = synthetic_separable(12, 99);
    std::string data = (dir / "corpus.json").string();
    save_json_graphs(ds, data);
    std::string cfg = write_config(dir / "cfg.json",
                                   "{\"gamma\": 0.4, \"hidden_dim\": 8, \"heads\": 2,\n"
                                   " \"L1\": 1, \"L2\": 1, \"L3\": 1,\n"
                                   " \"lr\": 0.01, \"batch_size\": 8, \"epochs\": 3,"
                                   " \"folds\": 3}");
    std::string run_dir = (dir / "run").string();

    std::string text;
    CHECK(run_cli("train --dataset " + data + " --config " + cfg +
                      " --seed 11 --out " + run_dir,
                  dir, &text) == 0);
    CHECK(text.find("over 3 folds") != std::string::npos);
    CHECK(fs::exists(run_dir + "/run.json"));
    CHECK(fs::exists(run_dir + "/manifest.json"));
    CHECK(fs::exists(run_dir + "/fold2.ckpt"));

    auto j = nlohmann::json::parse(slurp(run_dir + "/run.json"));
    CHECK(j["folds"].size() == 3);
    CHECK(j["config"]["gamma"].get<double>() == 0.4);

    CHECK(run_cli("eval --dataset " + data + " --config " + cfg + " --checkpoint " +
                      run_dir + "/fold0.ckpt --out " + (dir / "eval.json").string(),
                  dir, &text) == 0);
    auto e = nlohmann::json::parse(slurp(dir / "eval.json"));
    CHECK(e["graphs"].get<int>() == 12);
    CHECK(e["value"].get<double>() >= 0.0);

    CHECK(run_cli("attention-export --data " + data + " --index 2 --config " + cfg +
                      " --checkpoint " + run_dir + "/fold0.ckpt --out " +
                      (dir / "att").string(),
                  dir, &text) == 0);
    CHECK(slurp(dir / "att.dot").rfind("graph patches {", 0) == 0);
    auto a = nlohmann::json::parse(slurp(dir / "att.json"));
    CHECK(a["num_patches"].get<int>() >= 1);
    CHECK(a.contains("attention"));
}

TEST_CASE("train replay rebuilds run.json and checkpoints byte for byte") {
    fs::path dir = temp_dir("trainreplay");
    std::string data = (dir / "corpus.json").string();
    save_json_graphs(synthetic_separable(12, 5), data);
    std::string cfg = write_config(dir / "cfg.json",
                                   "{\"gamma\": 0.2, \"hidden_dim\": 8, \"heads\": 2,\n"
                                   " \"L1\": 1, \"L2\": 1, \"L3\": 1,\n"
                                   " \"lr\": 0.02, \"batch_size\": 4, \"epochs\": 2,"
                                   " \"folds\": 3}");
    std::string run_dir = (dir / "run").string();

    CHECK(run_cli("train --dataset " + data + " --config " + cfg +
                      " --gamma 0.8 --seed 3 --out " + run_dir,
                  dir) == 0);
    const std::string run_first = slurp(run_dir + "/run.json");
    const std::string ckpt_first = slurp(run_dir + "/fold1.ckpt");
    // The override must land in the recorded command and the run record.
    CHECK(run_first.find("\"gamma\": 0.8") != std::string::npos);
    fs::remove(run_dir + "/run.json");
    fs::remove(run_dir + "/fold1.ckpt");

    CHECK(run_cli("replay " + run_dir + "/manifest.json", dir) == 0);
    CHECK(slurp(run_dir + "/run.json") == run_first);
    CHECK(slurp(run_dir + "/fold1.ckpt") == ckpt_first);
}

TEST_CASE("eval rejects a config whose task count disagrees with the dataset") {
    fs::path dir = temp_dir("evalbad");
    std::string data = (dir / "corpus.json").string();
    save_json_graphs(synthetic_separable(12, 7), data);
    std::string cfg = write_config(dir / "cfg2.json",
                                   "{\"gamma\": 0.2, \"hidden_dim\": 8, \"heads\": 2,"
                                   " \"num_tasks\": 3}");
    std::string text;
    CHECK(run_cli("eval --dataset " + data + " --config " + cfg + " --checkpoint " +
                      (dir / "none.ckpt").string(),
                  dir, &text) == 1);
    CHECK(text.find("tasks") != std::string::npos);
}

TEST_CASE("bottleneck accepts a custom grid and reports violations") {
    fs::path dir = temp_dir("bottleneck");
    std::string grid = write_config(dir / "grid.json",
                                    "{\"taus\": [2], \"cuts\": [2], \"layers\": [2],\n"
                                    " \"t_sizes\": [6], \"trials\": 40,"
                                    " \"epsilon\": 0.001, \"dim\": 3}");
    std::string out = (dir / "report.json").string();

    std::string text;
    CHECK(run_cli("bottleneck --grid " + grid + " --out " + out + " --seed 9", dir,
                  &text) == 0);
    CHECK(text.find("0 bound violations") != std::string::npos);

    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j["violations"].get<int>() == 0);
    CHECK(j["feasible_instances"].get<int>() == 1);
    CHECK(j["instances"][0]["max_ratio"].get<double>() <=
          j["instances"][0]["bound"].get<double>() + 1e-9);

    // Same seed, same report, via replay.
    const std::string first = slurp(out);
    CHECK(run_cli("replay " + out + ".manifest.json", dir) == 0);
    CHECK(slurp(out) == first);
}

TEST_CASE("gradcheck passes at the documented tolerance and writes a report") {
    fs::path dir = temp_dir("gradcheck");
    std::string out = (dir / "gc.json").string();
    std::string text;
    CHECK(run_cli("gradcheck --seed 7 --out " + out, dir, &text) == 0);
    CHECK(text.find("tolerance 1e-4") != std::string::npos);
    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j["pass"].get<bool>());
    CHECK(j["max_rel_err"].get<double>() < 1e-4);
}

TEST_SUITE_END();

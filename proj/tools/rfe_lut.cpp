// rfe_lut: dataset synthesis, training, table compilation, inference,
// benchmarking and ablation. Exit codes: 0 ok, 2 config, 3 fidelity, 4 I/O.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rfelut/pipeline/commands.hpp"

namespace pl = rfelut::pipeline;

namespace {

pl::PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    auto kv = pl::read_config_file(path);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw rfelut::ConfigError("--set expects key=value, got '" + o + "'");
        kv[pl::detail::trim(o.substr(0, eq))] = pl::detail::trim(o.substr(eq + 1));
    }
    return pl::make_config(kv);
}

rfelut::ulut::LookupMode parse_lookup(const std::string& s) {
    if (s == "nearest") return rfelut::ulut::LookupMode::Nearest;
    if (s == "interpolated") return rfelut::ulut::LookupMode::Interpolated;
    throw rfelut::ConfigError("lookup must be nearest or interpolated");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Receptive-field-expanded lookup-table toolkit"};
    app.require_subcommand(1);

    std::string task = "seg", out_dir, config, checkpoint, bundle, input, output, value_type = "u8", lookup = "interpolated";
    std::size_t count = 64, trials = 1000;
    int size = 48;
    std::uint64_t seed = 1;
    std::vector<std::string> overrides;

    auto* gen = app.add_subcommand("gen", "write a synthetic dataset (input/ and target/ PGM pairs)");
    gen->add_option("--task", task, "sr4 or seg")->required();
    gen->add_option("--count", count, "number of pairs");
    gen->add_option("--size", size, "tile side in pixels (>= 32)");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("config", config, "key = value config file")->required();
        sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
    };
    auto* train = app.add_subcommand("train", "train a model; writes <out_dir>/model.graph");
    add_config(train);

    auto* lutize = app.add_subcommand("lutize", "compile a checkpoint into a table bundle");
    lutize->add_option("--checkpoint", checkpoint, "model.graph from train")->required();
    lutize->add_option("--out", bundle, "bundle path")->required();
    lutize->add_option("--value-type", value_type, "u8, i16 or f32");
    lutize->add_option("--trials", trials, "off-grid fidelity trials per table");

    auto* infer = app.add_subcommand("infer", "run a bundle on one PGM image");
    infer->add_option("--bundle", bundle, "table bundle")->required();
    infer->add_option("--input", input, "input PGM")->required();
    infer->add_option("--output", output, "output PGM")->required();
    infer->add_option("--lookup", lookup, "nearest or interpolated");

    auto* bench = app.add_subcommand("bench", "per-image metrics, storage and timing; writes bench.csv");
    add_config(bench);
    auto* ablate = app.add_subcommand("ablate", "train and score all five variants; writes ablate.csv");
    add_config(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : pl::kExitConfig;
    }

    try {
        if (*gen) {
            pl::gen_synthetic(pl::parse_task(task), count, size, seed, out_dir);
            std::cout << "wrote " << count << " pairs to " << out_dir << "\n";
        } else if (*train) {
            const auto c = load_config(config, overrides);
            std::cout << pl::cmd_train(c) << "\n";
        } else if (*lutize) {
            const auto rep = pl::cmd_lutize(checkpoint, bundle, pl::detail::parse_value_type(value_type), trials);
            std::cout << "storage_bytes " << rep.storage_bytes << "\nmax_grid_dev " << rep.max_grid_dev
                      << "\nmax_offgrid_dev_nearest " << rep.max_offgrid_dev_nearest << "\n";
        } else if (*infer) {
            pl::cmd_infer(bundle, input, output, parse_lookup(lookup));
        } else if (*bench) {
            const auto r = pl::cmd_bench(load_config(config, overrides));
            std::cout << r.csv << r.timing_csv;
        } else if (*ablate) {
            std::cout << pl::cmd_ablate(load_config(config, overrides)).csv;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pl::exit_code_for(e);
    }
    return pl::kExitOk;
}

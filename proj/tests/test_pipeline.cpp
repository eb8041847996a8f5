#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "rfelut/pipeline/commands.hpp"

namespace {

using namespace rfelut;
using namespace rfelut::pipeline;
namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("rfelut_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough to train in well under a second per variant.
PipelineConfig tiny(const std::string& task, const std::string& out, KeyValues extra = {}) {
    KeyValues kv{{"task", task},         {"out_dir", out},         {"size", "32"},
                 {"train_count", "2"},   {"test_count", "2"},      {"epochs", "1"},
                 {"finetune_epochs", "1"}, {"fidelity_trials", "20"}, {"bench_size", "32"},
                 {"seeds", "1"}};
    for (const auto& [k, v] : extra) kv[k] = v;
    return make_config(kv);
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

// ---------------------------------------------------------------------------

TEST(Synthetic, DeterministicPerIndex) {
    for (auto task : {Task::Sr4, Task::Seg}) {
        const auto a = make_pair(task, 32, 7, 3), b = make_pair(task, 32, 7, 3), c = make_pair(task, 32, 7, 4);
        EXPECT_EQ(a.input.data(), b.input.data());
        EXPECT_EQ(a.target.data(), b.target.data());
        EXPECT_NE(a.input.data(), c.input.data());
    }
}

TEST(Synthetic, ShapesAndValueRanges) {
    const auto sr = make_pair(Task::Sr4, 48, 1, 0);
    EXPECT_EQ(sr.target.width(), 48);
    EXPECT_EQ(sr.input.width(), 12);
    EXPECT_EQ(sr.input.height(), 12);
    const auto seg = make_pair(Task::Seg, 48, 1, 0);
    std::set<double> mask(seg.target.data().begin(), seg.target.data().end());
    EXPECT_EQ(mask, (std::set<double>{0.0, 255.0}));
    for (const auto* f : {&sr.input, &sr.target, &seg.input})
        for (double v : f->data()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 255.0);
            ASSERT_EQ(v, std::round(v));
        }
}

TEST(Synthetic, RejectsBadSizes) {
    EXPECT_THROW(make_pair(Task::Seg, 16, 1, 0), ConfigError);
    EXPECT_THROW(make_pair(Task::Sr4, 34, 1, 0), ConfigError);
    EXPECT_THROW(parse_task("denoise"), ConfigError);
}

TEST(Synthetic, GenWritesLoadableDataset) {
    const auto dir = temp_dir("gen");
    EXPECT_EQ(gen_synthetic(Task::Seg, 3, 32, 5, dir), 3u);
    EXPECT_TRUE(fs::exists(fs::path(dir) / "input" / "0002.pgm"));
    const auto loaded = load_dataset(dir);
    const auto direct = make_dataset(Task::Seg, 3, 32, 5);
    ASSERT_EQ(loaded.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(loaded[i].input.data(), direct[i].input.data());
        EXPECT_EQ(loaded[i].target.data(), direct[i].target.data());
    }
    EXPECT_THROW(load_dataset(temp_dir("gen_empty")), IoError);
}

// ---------------------------------------------------------------------------

TEST(ImageIo, RoundTripsGreyAndColour) {
    const auto dir = temp_dir("io");
    FeatureMap g(5, 7, 1), c(4, 3, 3);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>((i * 37) % 256);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>((i * 11) % 256);
    write_image(dir + "/g.pgm", g);
    write_image(dir + "/c.ppm", c);
    EXPECT_EQ(read_image(dir + "/g.pgm").data(), g.data());
    const auto back = read_image(dir + "/c.ppm");
    EXPECT_EQ(back.channels(), 3);
    EXPECT_EQ(back.data(), c.data());
}

TEST(ImageIo, RoundsAndClampsOnWrite) {
    const auto dir = temp_dir("io_clamp");
    FeatureMap f(1, 4, 1);
    f.data() = {-3.0, 1.5, 254.4, 300.0};
    write_image(dir + "/f.pgm", f);
    EXPECT_EQ(read_image(dir + "/f.pgm").data(), (std::vector<double>{0.0, 2.0, 254.0, 255.0}));
}

TEST(ImageIo, HeaderCommentsAndErrors) {
    const auto dir = temp_dir("io_err");
    {
        std::ofstream out(dir + "/c.pgm", std::ios::binary);
        out << "P5\n# made by hand\n2 1\n# another\n255\n" << '\x07' << '\xff';
    }
    EXPECT_EQ(read_image(dir + "/c.pgm").data(), (std::vector<double>{7.0, 255.0}));
    {
        std::ofstream out(dir + "/ascii.pgm");
        out << "P2\n1 1\n255\n0\n";
    }
    EXPECT_THROW(read_image(dir + "/ascii.pgm"), IoError);
    {
        std::ofstream out(dir + "/short.pgm", std::ios::binary);
        out << "P5\n4 4\n255\nab";
    }
    EXPECT_THROW(read_image(dir + "/short.pgm"), IoError);
    EXPECT_THROW(read_image(dir + "/missing.pgm"), IoError);
    EXPECT_THROW(write_image(dir + "/two.pgm", FeatureMap(2, 2, 2)), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(Config, ParsesCommentsAndWhitespace) {
    const auto kv = parse_config_text("# header\ntask = seg   # trailing\n\n  variant=+lvq\nhidden = 8, 8\n");
    EXPECT_EQ(kv.at("task"), "seg");
    EXPECT_EQ(kv.at("variant"), "+lvq");
    const auto c = make_config(kv);
    EXPECT_EQ(c.variant, Variant::Lvq);
    EXPECT_EQ(c.model.hidden, (std::vector<int>{8, 8}));
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_THROW(parse_config_text("task seg\n"), ConfigError);
    EXPECT_THROW(parse_config_text("= seg\n"), ConfigError);
    EXPECT_THROW(parse_config_text("task = seg\ntask = sr4\n"), ConfigError);
    EXPECT_THROW(make_config({{"variant", "full"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"colour", "red"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"epochs", "ten"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"learning_rate", "0.1x"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"batch_size", "0"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"preset", "M"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"variant", "huge"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "seg"}, {"value_type", "f16"}}), ConfigError);
    EXPECT_THROW(make_config({{"task", "sr4"}, {"size", "50"}}), ConfigError);
    EXPECT_THROW(read_config_file("/nonexistent/x.cfg"), IoError);
}

TEST(Config, PresetsAndOverrides) {
    const auto sr = make_config({{"task", "sr4"}});
    EXPECT_EQ(sr.preset, Preset::L);
    EXPECT_EQ(sr.model.grid, 17);
    EXPECT_EQ(sr.variant, Variant::BaselineSq);
    const auto seg = make_config({{"task", "seg"}});
    EXPECT_EQ(seg.preset, Preset::S);
    EXPECT_EQ(seg.model.grid, 9);
    EXPECT_EQ(make_config({{"task", "seg"}, {"preset", "L"}}).model.grid, 17);
    // Explicit keys win over the preset regardless of order.
    EXPECT_EQ(make_config({{"task", "seg"}, {"grid", "5"}, {"preset", "L"}}).model.grid, 5);
    const auto s = make_config({{"task", "seg"}, {"seeds", "4, 5"}, {"lookup", "nearest"}});
    EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{4, 5}));
    EXPECT_EQ(s.lookup, ulut::LookupMode::Nearest);
}

// ---------------------------------------------------------------------------

TEST(Model, VariantsShapeTheGraph) {
    ModelSpec s;
    s.task = Task::Seg;
    for (auto v : all_variants()) {
        s.variant = v;
        const auto g = build_graph(s, 1);
        EXPECT_EQ(g.levels(), uses_ulut(v) ? s.levels : 1) << variant_name(v);
        EXPECT_EQ(parse_variant(variant_name(v)), v);
        const auto d = g.pool(1).branches[0].pattern().dilation();
        EXPECT_EQ(d.x != 1 || d.y != 1, uses_idc(v)) << variant_name(v);
    }
}

TEST(Model, SrBaselineStorage) {
    const auto c = make_config({{"task", "sr4"}});
    const auto g = build_graph(c.model, 1);
    EXPECT_EQ(ulut::actual_storage(g, c.model.value_type), 1336336u);
}

TEST(Model, SpaceToDepthInverts) {
    const auto p = make_pair(Task::Sr4, 32, 3, 0);
    EXPECT_EQ(depth_to_space(space_to_depth(p.target)).data(), p.target.data());
}

TEST(Model, GraphAndBundleRoundTrip) {
    ModelSpec s;
    s.task = Task::Seg;
    s.variant = Variant::Full;
    const auto g = build_graph(s, 3);
    std::stringstream ss;
    write_graph(ss, Task::Seg, g);
    const auto back = read_graph(ss);
    EXPECT_EQ(back.task, Task::Seg);
    const auto img = make_pair(Task::Seg, 32, 1, 0).input;
    // Weights are stored as f32, so the first save rounds and later ones are exact.
    const auto a = back.graph.forward(img, ulut::float_eval()), b = g.forward(img, ulut::float_eval());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], 1e-3);
    std::stringstream again;
    write_graph(again, Task::Seg, back.graph);
    EXPECT_EQ(again.str(), ss.str());

    const auto tables = compile_graph(g, lut::ValueType::U8, 20);
    std::stringstream bs;
    write_bundle(bs, Task::Seg, tables);
    const auto tb = read_bundle(bs);
    const ulut::EvalOptions opt{lvq::QuantizerMode::Inference, ulut::LookupMode::Interpolated, 0};
    EXPECT_EQ(tb.graph.forward(img, opt).data(), tables.forward(img, opt).data());
    EXPECT_EQ(ulut::actual_storage(tb.graph), ulut::actual_storage(tables));
}

TEST(Model, MalformedFilesAreIoErrors) {
    const auto dir = temp_dir("malformed");
    auto io_code = [](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            return exit_code_for(e);
        }
        return static_cast<int>(kExitOk);
    };
    std::ofstream(dir + "/bad.graph") << "rfelut-graph 1\ntask seg\nnonsense\n";
    EXPECT_EQ(io_code([&] { load_graph(dir + "/bad.graph"); }), kExitIo);
    std::ofstream(dir + "/nan.graph") << "rfelut-graph 1\ntask seg\ninput_channels one\n";
    EXPECT_THROW(load_graph(dir + "/nan.graph"), IoError);
    std::ofstream(dir + "/bad.bundle") << "something else\n";
    EXPECT_EQ(io_code([&] { load_bundle(dir + "/bad.bundle"); }), kExitIo);
    EXPECT_THROW(load_bundle(dir + "/none.bundle"), IoError);
}

// ---------------------------------------------------------------------------

TEST(Commands, LutizeThenInferMatchesFloatOnGrid) {
    const auto dir = temp_dir("infer");
    const auto c = tiny("seg", dir, {{"variant", "baseline-sq"}});
    const auto ckpt = cmd_train(c);
    EXPECT_TRUE(fs::exists(dir + "/train_log.csv"));
    const auto rep = cmd_lutize(ckpt, dir + "/m.bundle", lut::ValueType::U8, 50);
    EXPECT_EQ(rep.max_grid_dev, 0.0);

    // Every tap of a constant 64 image sits on a grid point (step 32), so a
    // table lookup equals the network up to 8-bit output rounding.
    const FeatureMap flat(32, 32, 1, 64.0);
    const auto net = load_graph(ckpt);
    const auto tables = load_bundle(dir + "/m.bundle");
    const auto f = predict(net.graph, Task::Seg, flat, ulut::float_eval());
    for (auto mode : {ulut::LookupMode::Nearest, ulut::LookupMode::Interpolated}) {
        const auto t = predict(tables.graph, Task::Seg, flat, {lvq::QuantizerMode::Inference, mode, 0});
        for (std::size_t i = 0; i < f.size(); ++i) ASSERT_NEAR(t.data()[i], f.data()[i], 1.0);
    }

    write_image(dir + "/in.pgm", flat);
    cmd_infer(dir + "/m.bundle", dir + "/in.pgm", dir + "/out.pgm");
    const auto mask = read_image(dir + "/out.pgm");
    EXPECT_EQ(mask.width(), 32);
    for (double v : mask.data()) ASSERT_TRUE(v == 0.0 || v == 255.0);
}

TEST(Commands, InferUpscalesSr) {
    const auto dir = temp_dir("infer_sr");
    const auto c = tiny("sr4", dir);
    cmd_lutize(cmd_train(c), dir + "/m.bundle", lut::ValueType::U8, 20);
    write_image(dir + "/lr.pgm", make_pair(Task::Sr4, 32, 1, 0).input);
    cmd_infer(dir + "/m.bundle", dir + "/lr.pgm", dir + "/hr.pgm", ulut::LookupMode::Nearest);
    EXPECT_EQ(read_image(dir + "/hr.pgm").width(), 32);
    EXPECT_THROW(cmd_infer(dir + "/m.bundle", dir + "/missing.pgm", dir + "/x.pgm"), IoError);
}

TEST(Commands, SrBenchIsReproducible) {
    const auto dir = temp_dir("bench");
    const auto c = tiny("sr4", dir);
    const auto a = cmd_bench(c);
    EXPECT_EQ(a.storage_bytes, 1336336u);
    EXPECT_EQ(a.csv.substr(0, a.csv.find('\n')),
              "image,psnr_float,psnr_nearest,psnr_interp,ssim_float,ssim_interp,storage_bytes");
    EXPECT_EQ(count_lines(a.csv), 1 + 2 + 1);
    EXPECT_NE(a.csv.find("\nmean,"), std::string::npos);
    EXPECT_EQ(slurp(dir + "/bench.csv"), a.csv);
    EXPECT_TRUE(fs::exists(dir + "/bench_timing.csv"));
    EXPECT_GT(a.timing.float_ms, 0.0);
    EXPECT_EQ(a.timing.size, 32);

    // Reusing the checkpoint and bundle skips training and gives identical metrics.
    auto again = c;
    again.checkpoint = dir + "/model.graph";
    again.bundle = dir + "/model.bundle";
    again.out_dir = temp_dir("bench2");
    EXPECT_EQ(cmd_bench(again).csv, a.csv);
}

TEST(Commands, SegBenchColumns) {
    const auto dir = temp_dir("bench_seg");
    const auto r = cmd_bench(tiny("seg", dir, {{"variant", "+lvq"}}));
    EXPECT_EQ(r.csv.substr(0, r.csv.find('\n')), "image,dsc_float,dsc_nearest,dsc_interp,HD,PRE,SEN,MIOU,storage_bytes");
}

TEST(Commands, BenchRejectsTaskMismatch) {
    const auto dir = temp_dir("bench_mismatch");
    const auto ckpt = cmd_train(tiny("seg", dir, {{"variant", "baseline-sq"}}));
    auto c = tiny("sr4", temp_dir("bench_mismatch_out"));
    c.checkpoint = ckpt;
    EXPECT_THROW(cmd_bench(c), ConfigError);
}

TEST(Commands, AblateEmitsEveryVariant) {
    const auto dir = temp_dir("ablate");
    const auto r = cmd_ablate(tiny("seg", dir, {{"epochs", "1"}, {"finetune_epochs", "0"}}));
    EXPECT_EQ(r.csv.substr(0, r.csv.find('\n')), "variant,HD,PRE,DSC,SEN,MIOU,storage_bytes");
    EXPECT_EQ(count_lines(r.csv), 6);
    ASSERT_EQ(r.rows.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(r.rows[i].variant, all_variants()[i]);
        EXPECT_NE(r.csv.find("\n" + variant_name(all_variants()[i]) + ","), std::string::npos);
        EXPECT_EQ(r.rows[i].per_seed.size(), 1u);
    }
    EXPECT_EQ(slurp(dir + "/ablate.csv"), r.csv);
    EXPECT_EQ(count_lines(slurp(dir + "/ablate_seeds.csv")), 6);
}

TEST(Commands, AblateSrColumns) {
    const auto r = cmd_ablate(tiny("sr4", temp_dir("ablate_sr"), {{"finetune_epochs", "0"}}));
    EXPECT_EQ(r.csv.substr(0, r.csv.find('\n')), "variant,PSNR,SSIM,storage_bytes");
    EXPECT_EQ(count_lines(r.csv), 6);
}

// ---------------------------------------------------------------------------

TEST(ExitCodes, MapErrorFamilies) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
    EXPECT_EQ(exit_code_for(InvalidInput("x")), kExitConfig);
    EXPECT_EQ(exit_code_for(FidelityError("x")), kExitFidelity);
    EXPECT_EQ(exit_code_for(IoError("x")), kExitIo);
    EXPECT_EQ(exit_code_for(ParseError(ParseError::Kind::BadChecksum, "x")), kExitIo);
}

#ifdef RFE_LUT_BIN
int run_tool(const std::string& args) {
    const int status = std::system((std::string(RFE_LUT_BIN) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(ExitCodes, ToolEndToEnd) {
    const auto dir = temp_dir("tool");
    EXPECT_EQ(run_tool(""), kExitConfig);
    EXPECT_EQ(run_tool("frobnicate"), kExitConfig);
    EXPECT_EQ(run_tool("gen --task seg --count 1 --size 32 --out " + dir + "/data"), kExitOk);
    EXPECT_EQ(run_tool("gen --task blur --out " + dir + "/x"), kExitConfig);

    std::ofstream(dir + "/seg.cfg") << "task = seg\nvariant = baseline-sq\nsize = 32\ntrain_count = 1\nepochs = 1\n"
                                       "finetune_epochs = 0\nout_dir = " + dir + "/run\n";
    std::ofstream(dir + "/bad.cfg") << "task = seg\nwidth = 3\n";
    EXPECT_EQ(run_tool("train " + dir + "/bad.cfg"), kExitConfig);
    EXPECT_EQ(run_tool("train " + dir + "/missing.cfg"), kExitIo);
    EXPECT_EQ(run_tool("train " + dir + "/seg.cfg --set epochs=x"), kExitConfig);
    ASSERT_EQ(run_tool("train " + dir + "/seg.cfg"), kExitOk);
    ASSERT_EQ(run_tool("lutize --checkpoint " + dir + "/run/model.graph --out " + dir + "/m.bundle --trials 10"), kExitOk);
    EXPECT_EQ(run_tool("lutize --checkpoint " + dir + "/nope.graph --out " + dir + "/x.bundle"), kExitIo);
    EXPECT_EQ(run_tool("infer --bundle " + dir + "/m.bundle --input " + dir + "/data/input/0000.pgm --output " + dir +
                       "/mask.pgm"),
              kExitOk);
    EXPECT_TRUE(fs::exists(dir + "/mask.pgm"));

    // Flip one byte inside the first table block: checksum failure.
    auto bytes = slurp(dir + "/m.bundle");
    bytes[bytes.size() - 10] = static_cast<char>(bytes[bytes.size() - 10] ^ 0x5a);
    std::ofstream(dir + "/corrupt.bundle", std::ios::binary) << bytes;
    EXPECT_EQ(run_tool("infer --bundle " + dir + "/corrupt.bundle --input " + dir + "/data/input/0000.pgm --output " +
                       dir + "/x.pgm"),
              kExitIo);
}
#endif

}  // namespace

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "nsr/data/synthetic.hpp"
#include "nsr/field/checkpoint.hpp"
#include "nsr/field/geometric_init.hpp"
#include "nsr/optim/train.hpp"

using namespace nsr;

namespace {

FieldConfig small_field() {
    FieldConfig cfg;
    cfg.grid = {6, 8, 64, 2, 14};
    cfg.sdf_hidden = 32;
    cfg.geo_features = 7;
    cfg.color_hidden = 32;
    return cfg;
}

SyntheticData tiny_sphere() {
    SyntheticConfig sc;
    sc.views = 4;
    sc.val_views = 1;
    sc.width = sc.height = 16;
    sc.gt_resolution = 32;
    return generate_synthetic(make_scene("sphere"), sc);
}

TrainConfig short_run(int steps) {
    TrainConfig tc;
    tc.total_steps = steps;
    tc.batch_rays = 64;
    tc.samples_per_ray = 16;
    tc.checkpoint_every = 0;
    tc.validation_views = 1;
    return tc;
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("nsr_test_optim_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(Schedule, LearningRateEndpointsAndMidpoint) {
    TrainConfig cfg;
    cfg.total_steps = 20000;
    EXPECT_EQ(lr_at(0, cfg), 1e-2);
    EXPECT_EQ(lr_at(20000, cfg), 1e-4);
    EXPECT_NEAR(lr_at(10000, cfg), 1e-3, 1e-15);
    EXPECT_THROW(lr_at(-1, cfg), Error);
    EXPECT_THROW(lr_at(20001, cfg), Error);
}

TEST(Schedule, LearningRateStrictlyDecreasingAndBounded) {
    TrainConfig cfg;
    cfg.total_steps = 5000;
    double prev = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= cfg.total_steps; ++s) {
        const double lr = lr_at(s, cfg);
        ASSERT_LT(lr, prev) << s;
        ASSERT_GE(lr, cfg.lr_end);
        ASSERT_LE(lr, cfg.lr_start);
        prev = lr;
    }
}

TEST(Schedule, ActiveLevelTransitions) {
    TrainConfig cfg;
    EXPECT_EQ(active_levels_at(0, cfg, 16), 4);
    EXPECT_EQ(active_levels_at(1999, cfg, 16), 4);
    EXPECT_EQ(active_levels_at(2000, cfg, 16), 5);
    EXPECT_EQ(active_levels_at(3999, cfg, 16), 5);
    EXPECT_EQ(active_levels_at(4000, cfg, 16), 6);
    EXPECT_EQ(active_levels_at(12 * 2000, cfg, 16), 16);
    EXPECT_EQ(active_levels_at(1000000, cfg, 16), 16);
    EXPECT_EQ(active_levels_at(0, cfg, 2), 2);
}

TEST(Schedule, ActiveLevelsPiecewiseConstant) {
    TrainConfig cfg;
    cfg.steps_per_level = 250;
    int prev = active_levels_at(0, cfg, 8);
    for (int s = 1; s < 4000; ++s) {
        const int cur = active_levels_at(s, cfg, 8);
        ASSERT_GE(cur, prev);
        if (s % cfg.steps_per_level != 0) {
            ASSERT_EQ(cur, prev) << s;
        }
        prev = cur;
    }
}

TEST(Schedule, ConfigRejectsInvertedRates) {
    TrainConfig cfg;
    cfg.lr_end = 1e-1;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.batch_rays = 0;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    VecX<double> p = VecX<double>::LinSpaced(7, -1, 1);
    const VecX<double> before = p;
    AdamState<double> st{7};
    for (int i = 0; i < 5; ++i) adam_step<double>(p, VecX<double>::Zero(7), st, 1e-2);
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.step, 5u);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
    VecX<double> p = VecX<double>::Constant(1, 0.3);
    AdamState<double> st{1};
    adam_step<double>(p, VecX<double>::Ones(1), st, 1e-2);
    EXPECT_NEAR(0.3 - p[0], 1e-2, 1e-12);
}

TEST(Adam, QuadraticBowlConverges) {
    VecX<double> p = VecX<double>::Constant(1, 1.0);
    AdamState<double> st{1};
    for (int i = 0; i < 500; ++i) adam_step<double>(p, VecX<double>::Constant(1, 2 * p[0]), st, 1e-2);
    EXPECT_LT(std::abs(p[0]), 1e-3);
}

TEST(Adam, NonFiniteGradientAbortsWithoutChange) {
    VecX<double> p = VecX<double>::Ones(3);
    AdamState<double> st{3};
    VecX<double> g = VecX<double>::Ones(3);
    g[1] = std::numeric_limits<double>::quiet_NaN();
    try {
        adam_step<double>(p, g, st, 1e-2);
        FAIL() << "expected non_finite";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite);
    }
    EXPECT_EQ(p, VecX<double>::Ones(3));
    EXPECT_EQ(st.step, 0u);
    EXPECT_TRUE(st.m.isZero(0));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    FieldParams<float> p(small_field());
    init_random(p, 5);
    const auto dir = scratch("roundtrip");
    save_checkpoint(p, 1234, dir / "a.nsrckpt");
    const auto ck = load_checkpoint<float>(dir / "a.nsrckpt");
    EXPECT_EQ(ck.step, 1234u);
    EXPECT_EQ(ck.params.size(), p.size());
    EXPECT_EQ(std::memcmp(ck.params.values().data(), p.values().data(), p.size() * sizeof(float)), 0);
    EXPECT_EQ(serialize_checkpoint(ck.params, 1234), serialize_checkpoint(p, 1234));
}

TEST(Checkpoint, WidthConversion) {
    FieldParams<float> p(small_field());
    init_random(p, 6);
    const auto dir = scratch("width");
    save_checkpoint(p, 0, dir / "f.nsrckpt");
    const auto d = load_checkpoint<double>(dir / "f.nsrckpt");
    EXPECT_EQ(d.params.values().cast<float>(), p.values());
}

TEST(Checkpoint, CorruptFilesAreParseErrors) {
    FieldParams<float> p(small_field());
    init_random(p, 7);
    const auto dir = scratch("corrupt");
    auto bytes = serialize_checkpoint(p, 3);
    auto write = [&](const std::string& name, const std::vector<char>& b) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(b.data(), std::streamsize(b.size()));
        return dir / name;
    };
    auto expect_code = [](const std::filesystem::path& f, ErrorCode code) {
        try {
            load_checkpoint<float>(f);
            ADD_FAILURE() << "loaded " << f;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), code) << e.what();
            EXPECT_NE(std::string(e.what()).find(f.filename().string()), std::string::npos) << e.what();
        }
    };
    auto flipped = bytes;
    flipped[200] ^= 0x10;
    expect_code(write("flipped.nsrckpt", flipped), ErrorCode::parse);
    expect_code(write("truncated.nsrckpt", std::vector<char>(bytes.begin(), bytes.end() - 100)), ErrorCode::parse);
    auto magic = bytes;
    magic[0] = 'X';
    expect_code(write("magic.nsrckpt", magic), ErrorCode::parse);
    expect_code(dir / "absent.nsrckpt", ErrorCode::io);
}

TEST(GeometricInit, FitsTheInitSphere) {
    FieldParams<float> p(small_field());
    init_random(p, 11);
    const auto rep = geometric_init(p, 11);
    EXPECT_LT(rep.max_error, 0.02);
    // independent check on fresh points, including the surface itself
    Rng rng(77);
    Mat<float> pts(3, 2000);
    for (int i = 0; i < 2000; ++i) {
        Vec3d dir(normal01(rng), normal01(rng), normal01(rng));
        pts.col(i) = (Vec3d::Constant(0.5) + 0.25 * dir.normalized()).cast<float>();
    }
    SdfTape<float> tape;
    sdf_forward(p, LevelMask{6}, pts, tape, false);
    EXPECT_LT(tape.sdf().cwiseAbs().maxCoeff(), 0.02f);
}

TEST(GeometricInit, RequiresZeroHashWeights) {
    FieldParams<float> p(small_field());
    init_random(p, 1);
    p.block(p.layout().sdf_w1)(0, 0) = 1.0f;
    EXPECT_THROW(geometric_init(p, 1), Error);
}

TEST(Train, ZeroStepsKeepInitialization) {
    const auto data = tiny_sphere();
    FieldParams<float> p(small_field());
    init_random(p, 2);
    const VecX<float> before = p.values();
    const auto r = train(data.set, p, short_run(0));
    EXPECT_EQ(r.steps, 0);
    EXPECT_EQ(p.values(), before);
}

TEST(Train, SameSeedSameCheckpointBytes) {
    const auto data = tiny_sphere();
    std::vector<char> out[2];
    for (auto& bytes : out) {
        FieldParams<float> p(small_field());
        init_random(p, 3);
        TrainConfig tc = short_run(15);
        tc.seed = 9;
        train(data.set, p, tc);
        bytes = serialize_checkpoint(p, 15);
    }
    EXPECT_EQ(out[0], out[1]);
}

TEST(Train, LossDecreasesOnTinySphere) {
    const auto data = tiny_sphere();
    auto p = initialize_field<float>(small_field(), 4);
    TrainConfig tc = short_run(150);
    tc.batch_rays = 128;
    tc.steps_per_level = 50;
    const auto r = train(data.set, p, tc);
    ASSERT_EQ(r.log.size(), 150u);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
        head += r.log[std::size_t(i)].l_rgb;
        tail += r.log[r.log.size() - 1 - std::size_t(i)].l_rgb;
    }
    EXPECT_LT(tail, 0.5 * head);
    EXPECT_EQ(r.aborted, 0);
    ASSERT_EQ(r.validation.size(), 1u);
    EXPECT_GT(r.validation[0].psnr, 10.0);
}

TEST(Train, LogsEveryStepWithScheduleValues) {
    const auto data = tiny_sphere();
    FieldParams<float> p(small_field());
    init_random(p, 5);
    TrainConfig tc = short_run(12);
    tc.steps_per_level = 5;
    const auto r = train(data.set, p, tc);
    ASSERT_EQ(r.log.size(), 12u);
    for (const auto& e : r.log) {
        EXPECT_EQ(e.lr, lr_at(e.step, tc));
        EXPECT_EQ(e.active_levels, active_levels_at(e.step, tc, 6));
        EXPECT_GT(e.min_lambda_r, 0.0);
        EXPECT_LE(e.max_lambda_r, 1.0);
        EXPECT_GE(e.min_lambda_g, 0.0);
        EXPECT_LE(e.max_lambda_g, 1.0);
    }
}

TEST(Train, TooManyAbortedStepsFail) {
    const auto data = tiny_sphere();
    FieldParams<float> p(small_field());
    init_random(p, 6);
    p.values()[p.layout().s_log] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(data.set, p, short_run(10));
        FAIL() << "expected the run to fail";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite);
    }
}

TEST(Train, OutputWritesLogsAndCheckpoints) {
    const auto data = tiny_sphere();
    FieldParams<float> p(small_field());
    init_random(p, 8);
    const auto dir = scratch("output");
    TrainConfig tc = short_run(6);
    tc.checkpoint_every = 3;
    tc.validate_every = 3;
    {
        TrainOutput<float> out(dir);
        train(data.set, p, tc, out.hooks(tc.total_steps));
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_000003.nsrckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_000006.nsrckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "final.nsrckpt"));
    std::ifstream log(dir / "train_log.jsonl");
    int lines = 0;
    for (std::string line; std::getline(log, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["step"].get<int>(), lines);
        EXPECT_TRUE(j.contains("mean_lambda_r"));
    }
    EXPECT_EQ(lines, 6);
    std::ifstream val(dir / "validation.jsonl");
    lines = 0;
    for (std::string line; std::getline(val, line);) ++lines;
    EXPECT_EQ(lines, 2);
    EXPECT_EQ(load_checkpoint<float>(dir / "final.nsrckpt").step, 6u);
}

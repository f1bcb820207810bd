#include <doctest.h>

#include <stdexcept>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "nest/binary_io.hpp"
#include "nest/gradcheck.hpp"
#include "nest/metrics.hpp"
#include "nest/model.hpp"
#include "nest/ops.hpp"
#include "model_fixture.hpp"

using namespace nest;

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_mat(const Tensor& t) { return Eigen::Map<const Mat>(t.data(), t.rows(), t.cols()); }

ModelConfig tiny_config() {
    ModelConfig c;
    c.nodes = 8;
    c.regions = 2;
    c.lookback = 4;
    c.patch = 2;
    c.embed_dim = 8;
    c.layers = 2;
    c.steps_per_day = 6;
    return c;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = n(rng);
    return t;
}

ForwardInput random_input(const ModelConfig& c, std::size_t batch, std::mt19937_64& rng, bool zero_guidance = false) {
    ForwardInput in;
    in.x = random_tensor({batch * c.nodes, c.lookback * c.channels}, rng);
    if (!zero_guidance) in.guidance = random_tensor({batch * c.regions, c.patch * c.channels}, rng);
    for (std::size_t b = 0; b < batch; ++b) {
        in.origin.push_back(static_cast<std::int64_t>(13 + 5 * b));
        in.guidance_origin.push_back(static_cast<std::int64_t>(13 + 5 * b));
    }
    return in;
}

// Straight-line cross-scale layer for one sample, no MLP.
std::pair<Mat, Mat> reference_layer(const ParamStore& p, const std::string& prefix, const Mat& hx, const Mat& hz) {
    auto attn = [&](const std::string& dir, const Mat& q_in, const Mat& kv) {
        const Mat q = q_in * to_mat(p.at(prefix + dir + ".q.w").value);
        const Mat k = kv * to_mat(p.at(prefix + dir + ".k.w").value);
        const Mat v = kv * to_mat(p.at(prefix + dir + ".v.w").value);
        Mat s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp();
            s.row(r) /= s.row(r).sum();
        }
        return Mat(s * v * to_mat(p.at(prefix + dir + ".o.w").value));
    };
    const Mat x = hx + attn(".td", hx, hz);
    const Mat z = hz + attn(".bu", hz, x);
    return {x, z};
}

Var full_loss(Tape& tape, NestModel& model, const ForwardInput& in, const Tensor& node_t, const Tensor& next_t,
              const Tensor& bd_t) {
    ForwardInput zero = in;
    zero.guidance = Tensor();
    ForecastBundle bd = model.forward(tape, zero);
    ForecastBundle f = model.forward(tape, in);
    return composite_loss(model.config(), f.node, f.next, bd.boundary, node_t, next_t, bd_t, 0.1, 0.2).total;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.quantiles = {0.1, 0.9};
    CHECK_THROWS(c.validate());
    c.quantiles = {0.5, 0.1};
    CHECK_THROWS(c.validate());
    c.quantiles = {0.0, 0.5};
    CHECK_THROWS(c.validate());
    c = tiny_config();
    c.patch = 0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("parameter count is a function of the config") {
    const ModelConfig c = tiny_config();
    CHECK(init_params(c, 1).scalar_count() == init_params(c, 2).scalar_count());
    CHECK_FALSE(init_params(c, 1).at("enc.x.w").value == init_params(c, 2).at("enc.x.w").value);
    CHECK(init_params(c, 3).at("enc.x.w").value == init_params(c, 3).at("enc.x.w").value);
    ModelConfig no_ca = c;
    no_ca.cross_attention = false;
    CHECK(init_params(no_ca, 1).scalar_count() < init_params(c, 1).scalar_count());
    CHECK(init_params(c, 1).at("enc.x.b").value == Tensor({c.embed_dim}));
}

TEST_CASE("encode_past: zero case and hand example") {
    ModelConfig c;
    c.nodes = 2;
    c.regions = 1;
    c.lookback = 2;
    c.patch = 1;
    c.embed_dim = 2;
    c.steps_per_day = 4;
    NestModel model(c, 0);
    for (auto& p : model.params()) p.value.fill(0.0);
    Tape zt(false);
    CHECK(model.encode_past(zt, Tensor::matrix({{1, 2}, {3, 4}}), {6}).value() == Tensor({2, 2}));

    model.params().at("enc.x.w").value = Tensor::matrix({{1, 2}, {3, 4}});
    model.params().at("enc.x.b").value = Tensor::vector({0.5, -0.5});
    Tensor& tod = model.params().at("emb.tod").value;
    tod.at(0, 0) = 1.0;  // steps 4 and 5 hit slots 0 and 1 of day 1
    tod.at(1, 1) = 1.0;
    Tensor& dow = model.params().at("emb.dow").value;
    dow.at(1, 0) = 2.0;
    dow.at(1, 1) = 2.0;
    Tensor& se = model.params().at("emb.node").value;
    se.at(0, 0) = 0.1;
    se.at(1, 1) = 0.2;
    Tape t(false);
    const Tensor h = model.encode_past(t, Tensor::matrix({{1, 2}, {-1, 0}}), {6}).value();
    CHECK(max_abs_diff(h, Tensor::matrix({{10.1, 12.0}, {2.0, 0.2}})) < 1e-12);

    // Only the timestamp differs: outputs differ by the change in TE alone.
    const Tensor h2 = model.encode_past(t, Tensor::matrix({{1, 2}, {-1, 0}}), {7}).value();
    const double shift0 = h2.at(0, 0) - h.at(0, 0), shift1 = h2.at(0, 1) - h.at(0, 1);
    CHECK(h2.at(1, 0) - h.at(1, 0) == doctest::Approx(shift0));
    CHECK(h2.at(1, 1) - h.at(1, 1) == doctest::Approx(shift1));
    CHECK_THROWS(model.encode_past(t, Tensor({3, 2}), {6}));
}

TEST_CASE("encode_guidance: zero masks, hand example, shared rows") {
    ModelConfig c;
    c.nodes = 2;
    c.regions = 2;
    c.lookback = 2;
    c.patch = 2;
    c.embed_dim = 2;
    c.steps_per_day = 4;
    NestModel model(c, 0);
    for (auto& p : model.params()) p.value.fill(0.0);
    model.params().at("enc.z.w").value = Tensor::matrix({{1, 0}, {1, -1}});
    model.params().at("enc.z.b").value = Tensor::vector({0.25, 0.5});
    model.params().at("emb.region").value = Tensor::matrix({{1, 1}, {-1, 0}});
    model.params().at("emb.tod").value.at(2, 0) = 4.0;  // steps 2, 3 -> slots 2, 3
    Tape t(false);
    const Tensor zero = model.encode_guidance(t, Tensor(), {2}).value();
    CHECK(max_abs_diff(zero, Tensor::matrix({{0.25 + 2.0 + 1.0, 0.5 + 1.0}, {0.25 + 2.0 - 1.0, 0.5}})) < 1e-12);
    const Tensor h = model.encode_guidance(t, Tensor::matrix({{1, 2}, {1, 2}}), {2}).value();
    // [1,2] W = [3, -2]
    CHECK(max_abs_diff(h, Tensor::matrix({{6.25, -0.5}, {4.25, -1.5}})) < 1e-12);
    CHECK(h.at(0, 0) - h.at(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("cross-scale layer: residual identity, single region, reference implementation") {
    ModelConfig c = tiny_config();
    c.mlp = false;
    std::mt19937_64 rng(1);
    NestModel model(c, 5);
    const Tensor hx = random_tensor({c.nodes, c.embed_dim}, rng), hz = random_tensor({c.regions, c.embed_dim}, rng);

    SUBCASE("reference") {
        Tape t(false);
        const EncodedTokens out = model.cross_scale_layer(t, 0, {t.constant(hx), t.constant(hz)}, 1);
        const auto [rx, rz] = reference_layer(model.params(), "layer0", to_mat(hx), to_mat(hz));
        CHECK((to_mat(out.nodes.value()) - rx).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((to_mat(out.regions.value()) - rz).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("zero value weights") {
        model.params().at("layer0.td.v.w").value.fill(0.0);
        Tape t(false);
        const EncodedTokens out = model.cross_scale_layer(t, 0, {t.constant(hx), t.constant(hz)}, 1);
        CHECK(out.nodes.value() == hx);
    }
    SUBCASE("single region token") {
        ModelConfig one = c;
        one.regions = 1;
        NestModel m1(one, 2);
        Tape t(false);
        const Tensor z1 = random_tensor({1, c.embed_dim}, rng);
        const Tensor out = m1.cross_scale_layer(t, 0, {t.constant(hx), t.constant(z1)}, 1).nodes.value();
        for (std::size_t i = 1; i < c.nodes; ++i)
            for (std::size_t j = 0; j < c.embed_dim; ++j)
                CHECK(out.at(i, j) - hx.at(i, j) == doctest::Approx(out.at(0, j) - hx.at(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("forward shapes and determinism") {
    const ModelConfig c = tiny_config();
    NestModel model(c, 3);
    std::mt19937_64 rng(4);
    const ForwardInput in = random_input(c, 3, rng);
    const Forecast a = predict(model, in), b = predict(model, in);
    CHECK(a.node.shape() == Shape{3 * c.nodes, c.patch * c.channels});
    CHECK(a.next.size() == 3);
    CHECK(a.boundary.size() == 3);
    CHECK(a.next[0].shape() == Shape{3 * c.regions, c.patch * c.channels});
    CHECK(a.boundary[2].shape() == Shape{3 * c.regions, c.patch * c.channels});
    CHECK(a.node == b.node);
    CHECK(a.next == b.next);
    CHECK(a.boundary == b.boundary);
    CHECK(a.node.all_finite());
}

TEST_CASE("batched forward equals per-sample forward") {
    const ModelConfig c = tiny_config();
    NestModel model(c, 3);
    std::mt19937_64 rng(6);
    const ForwardInput in = random_input(c, 3, rng);
    const Forecast all = predict(model, in);
    for (std::size_t b = 0; b < 3; ++b) {
        ForwardInput one;
        one.x = Tensor({c.nodes, c.lookback});
        std::copy(in.x.data() + b * c.nodes * c.lookback, in.x.data() + (b + 1) * c.nodes * c.lookback, one.x.data());
        one.guidance = Tensor({c.regions, c.patch});
        std::copy(in.guidance.data() + b * c.regions * c.patch, in.guidance.data() + (b + 1) * c.regions * c.patch,
                  one.guidance.data());
        one.origin = {in.origin[b]};
        one.guidance_origin = {in.guidance_origin[b]};
        const Forecast f = predict(model, one);
        for (std::size_t k = 0; k < f.node.size(); ++k)
            CHECK(f.node[k] == doctest::Approx(all.node[b * f.node.size() + k]).epsilon(1e-12));
    }
}

TEST_CASE("permuting region tokens leaves node forecasts unchanged") {
    ModelConfig c = tiny_config();
    c.regions = 3;
    NestModel model(c, 8);
    std::mt19937_64 rng(9);
    const ForwardInput in = random_input(c, 1, rng);
    const std::size_t perm[] = {2, 0, 1};
    NestModel permuted = model;
    ForwardInput pin = in;
    const Tensor& se = model.params().at("emb.region").value;
    Tensor& pse = permuted.params().at("emb.region").value;
    for (std::size_t m = 0; m < 3; ++m) {
        std::copy(se.row(perm[m]).begin(), se.row(perm[m]).end(), pse.row(m).begin());
        std::copy(in.guidance.row(perm[m]).begin(), in.guidance.row(perm[m]).end(), pin.guidance.row(m).begin());
    }
    CHECK(max_abs_diff(predict(model, in).node, predict(permuted, pin).node) < 1e-10);
}

TEST_CASE("composite loss degenerate weights and perfect predictions") {
    const ModelConfig c = tiny_config();
    NestModel model(c, 2);
    std::mt19937_64 rng(3);
    const ForwardInput in = random_input(c, 2, rng);
    Tape t;
    const ForecastBundle f = model.forward(t, in);
    const Tensor nt = random_tensor(f.node.value().shape(), rng), zt = random_tensor(f.next[0].value().shape(), rng);
    const LossTerms only_x = composite_loss(c, f.node, f.next, f.boundary, nt, zt, zt, 0.0, 0.0);
    CHECK(only_x.total.value()[0] == doctest::Approx(only_x.node).epsilon(1e-15));

    std::vector<Var> exact_next, exact_bd;
    for (std::size_t q = 0; q < 3; ++q) {
        exact_next.push_back(t.constant(zt));
        exact_bd.push_back(t.constant(zt));
    }
    const LossTerms zero = composite_loss(c, t.constant(nt), exact_next, exact_bd, nt, zt, zt, 0.1, 0.2);
    CHECK(zero.total.value()[0] == 0.0);
    CHECK_THROWS(composite_loss(c, f.node, f.next, f.boundary, nt, zt, zt, -1.0, 0.0));
}

TEST_CASE("full loss gradient matches finite differences on the tiny config") {
    const ModelConfig c = tiny_config();
    NestModel model(c, 11);
    std::mt19937_64 rng(12);
    const ForwardInput in = random_input(c, 2, rng);
    const Tensor nt = random_tensor({2 * c.nodes, c.patch}, rng);
    const Tensor zt = random_tensor({2 * c.regions, c.patch}, rng), bt = random_tensor({2 * c.regions, c.patch}, rng);
    const GradCheckReport r = gradient_check(model.params(), [&](Tape& t, ParamStore& store) {
        return testing::with_store(c, store, [&](NestModel& m) { return full_loss(t, m, in, nt, zt, bt); });
    }, 1e-5);
    INFO("max relative error " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("instrumented multiply-adds of the cross-scale stack match the closed form") {
    for (const bool mlp : {true, false}) {
        for (const std::size_t n : {5, 10}) {
            ModelConfig c = tiny_config();
            c.nodes = n;
            c.regions = 3;
            c.mlp = mlp;
            c.attn_dim = 6;
            NestModel model(c, 1);
            std::mt19937_64 rng(2);
            Tape t(false);
            EncodedTokens tok{t.constant(random_tensor({n, c.embed_dim}, rng)),
                              t.constant(random_tensor({3, c.embed_dim}, rng))};
            flops::reset();
            for (std::size_t l = 0; l < c.layers; ++l) tok = model.cross_scale_layer(t, l, tok, 1);
            const flops::Counts counted = flops::read();
            const AttentionCost cost = attention_cost(n, 3, c.embed_dim, c.layers, 6, mlp);
            CHECK(counted.attention == cost.cross);
            CHECK(counted.projection == cost.projection);
        }
    }
}

TEST_CASE("checkpoint round trip and corruption") {
    Checkpoint ck;
    ck.config = tiny_config();
    ck.params = init_params(ck.config, 4);
    ck.norm.mean = Tensor({8, 1}, 0.5);
    ck.norm.stddev = Tensor({8, 1}, 2.0);
    ck.seed = 4;
    ck.step = 99;
    ck.guidance = GuidanceMode::past;
    const auto bytes = encode_checkpoint(ck);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back.config == ck.config);
    CHECK(back.step == 99);
    CHECK(back.guidance == GuidanceMode::past);
    CHECK(back.norm.stddev == ck.norm.stddev);
    CHECK(encode_checkpoint(back) == bytes);

    auto kind = [](std::vector<std::uint8_t> b) {
        try {
            decode_checkpoint(std::move(b));
        } catch (const FormatError& e) {
            return e.kind();
        }
        return FormatError::Kind::invalid;
    };
    auto magic = bytes;
    magic[2] ^= 1;
    CHECK(kind(magic) == FormatError::Kind::bad_magic);
    auto cut = bytes;
    cut.resize(cut.size() - 100);
    CHECK(kind(cut) == FormatError::Kind::truncated);
    auto flip = bytes;
    flip[flip.size() - 50] ^= 4;
    CHECK(kind(flip) == FormatError::Kind::checksum_mismatch);

    CHECK(config_from_json(config_json(ck.config)) == ck.config);
}

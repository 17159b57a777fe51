#include <doctest.h>

#include <cmath>

#include "mealscan/core/io.hpp"
#include "mealscan/core/random.hpp"
#include "mealscan/segnet/kernels.hpp"
#include "mealscan/segnet/network.hpp"
#include "mealscan/segnet/train.hpp"
#include "test_util.hpp"

using namespace mealscan;
using namespace mealscan::segnet;

namespace {

Tensor random_input(int n, int h, int w, std::uint64_t seed) {
    Tensor t(n, kInputChannels, h, w);
    Rng rng(seed);
    for (double& v : t.v) v = rng.uniform();
    return t;
}

// Tiny network for finite-difference checks (a few thousand parameters). At 64x64 the bottleneck keeps
// 2x2 pixels per sample, so its batch statistics are not degenerate.
NetworkConfig tiny_config() {
    NetworkConfig c;
    c.input_height = 64;
    c.input_width = 64;
    c.encoder_filters = {2, 2, 3, 3, 4, 4};
    return c;
}

// Blob scenes: a plate disk with a food blob on it; each class has its own flat color.
Sample blob_sample(const NetworkConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const int h = cfg.input_height, w = cfg.input_width;
    Sample s;
    s.input = Tensor(1, kInputChannels, h, w);
    s.food = Image<std::uint8_t>(w, h, 0);
    s.plate = Image<std::uint8_t>(w, h, 0);
    const int plate_cls = 1 + int(rng.below(5));
    const int food_cls = 1 + int(rng.below(7));
    const double pcx = w * rng.uniform(0.35, 0.65), pcy = h * rng.uniform(0.35, 0.65);
    const double pr = w * rng.uniform(0.25, 0.35), fr = pr * rng.uniform(0.4, 0.7);
    const double fcx = pcx + rng.uniform(-0.2, 0.2) * pr, fcy = pcy + rng.uniform(-0.2, 0.2) * pr;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int f = 0, p = 0;
            if (std::hypot(x - pcx, y - pcy) < pr) p = plate_cls;
            if (std::hypot(x - fcx, y - fcy) < fr) f = food_cls;
            s.food(x, y) = std::uint8_t(f);
            s.plate(x, y) = std::uint8_t(p);
            const double r = f ? 0.1 * f : 0.15 * p + 0.05;
            const double g = f ? 0.9 - 0.1 * f : 0.3;
            const double b = f ? 0.5 : 0.8 - 0.1 * p;
            const double d = 0.4 - (p ? 0.01 : 0.0) - (f ? 0.02 : 0.0);
            s.input.at(0, 0, y, x) = r;
            s.input.at(0, 1, y, x) = g;
            s.input.at(0, 2, y, x) = b;
            s.input.at(0, 3, y, x) = d;
        }
    return s;
}

std::vector<double> flat_params(const Network& net) {
    std::vector<double> out;
    for (const auto& p : net.parameters()) out.insert(out.end(), p.value.begin(), p.value.end());
    for (const auto& p : net.buffers()) out.insert(out.end(), p.value.begin(), p.value.end());
    return out;
}

void zero_heads(Network& net) {
    for (auto& p : net.parameters())
        if (p.name.find(".head.") != std::string::npos) std::fill(p.value.begin(), p.value.end(), 0.0);
}

}  // namespace

TEST_CASE("network configuration") {
    CHECK(NetworkConfig::table_widths().encoder_filters == std::array<int, 6>{16, 32, 64, 128, 256, 512});
    CHECK(NetworkConfig::scaled(0.25).encoder_filters == std::array<int, 6>{4, 8, 16, 32, 64, 128});
    NetworkConfig bad;
    bad.input_height = 48;
    CHECK_THROWS_AS(Network(bad, 1), Error);
}

TEST_CASE("topology: six encoder stages, five upsampling stages per decoder, 1x1 heads") {
    Network net(NetworkConfig{}, 1);
    for (int i = 0; i < 6; ++i) {
        CHECK(net.encoder()[i].stride == kEncoderStrides[i]);
        CHECK(net.encoder()[i].bias == -1);
    }
    for (const auto* dec : {&net.food_decoder(), &net.plate_decoder()}) {
        for (const auto& d : dec->deconv) {
            CHECK(d.transposed);
            CHECK(d.stride == 2);
        }
        CHECK(dec->head.kernel == 1);
        CHECK(dec->head.bias >= 0);
    }
    CHECK(net.food_decoder().head.out_c == 8);
    CHECK(net.plate_decoder().head.out_c == 6);
    // Skip conv at stage s consumes deconv output plus the encoder feature of matching resolution.
    const auto& f = NetworkConfig{}.encoder_filters;
    for (int s = 0; s < 4; ++s) CHECK(net.food_decoder().skip_conv[s].in_c == f[5 - s] + f[3 - s]);
}

TEST_CASE("64x64 input yields full-resolution maps") {
    Network net(NetworkConfig{}, 7);
    auto out = net.forward(random_input(2, 64, 64, 3), Mode::inference);
    CHECK(out.food_logits.n == 2);
    CHECK(out.food_logits.c == 8);
    CHECK(out.food_logits.h == 64);
    CHECK(out.food_logits.w == 64);
    CHECK(out.plate_logits.c == 6);
    CHECK(out.plate_logits.h == 64);
    CHECK(out.plate_logits.w == 64);
    CHECK_THROWS_AS(net.forward(random_input(1, 32, 32, 3), Mode::inference), Error);
}

TEST_CASE("shape contract holds for other sizes divisible by 32") {
    NetworkConfig c = tiny_config();
    c.input_height = 96;
    c.input_width = 32;
    Network net(c, 2);
    auto out = net.forward(random_input(1, 96, 32, 4), Mode::inference);
    CHECK(out.food_logits.h == 96);
    CHECK(out.plate_logits.w == 32);
}

TEST_CASE("same seed gives bit-identical parameters") {
    Network a(NetworkConfig{}, 42), b(NetworkConfig{}, 42), c(NetworkConfig{}, 43);
    CHECK(flat_params(a) == flat_params(b));
    CHECK(flat_params(a) != flat_params(c));
}

TEST_CASE("zero heads give uniform distributions") {
    Network net(NetworkConfig{}, 5);
    zero_heads(net);
    auto out = net.forward(random_input(1, 64, 64, 9), Mode::inference);
    auto pf = softmax(out.food_logits, 0);
    auto pp = softmax(out.plate_logits, 0);
    for (double v : pf.values) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-15));
    for (double v : pp.values) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));
}

TEST_CASE("softmax outputs are normalized for arbitrary inputs") {
    Network net(NetworkConfig{}, 11);
    Rng rng(12);
    for (int trial = 0; trial < 3; ++trial) {
        auto in = random_input(1, 64, 64, rng.next());
        for (double& v : in.v) v = (v - 0.5) * std::pow(10.0, trial * 2);
        auto out = net.forward(in, Mode::inference);
        auto pf = softmax(out.food_logits, 0);
        auto pp = softmax(out.plate_logits, 0);
        CHECK(pf.normalization_error() < 1e-5);
        CHECK(pp.normalization_error() < 1e-5);
    }
}

TEST_CASE("left-right flip is not an output symmetry") {
    Network net(NetworkConfig{}, 13);
    auto in = random_input(1, 64, 64, 14);
    Tensor flipped = in;
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) flipped.at(0, c, y, x) = in.at(0, c, y, in.w - 1 - x);
    auto a = net.forward(in, Mode::inference).food_logits;
    auto b = net.forward(flipped, Mode::inference).food_logits;
    double diff = 0;
    for (int c = 0; c < a.c; ++c)
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x) diff = std::max(diff, std::abs(a.at(0, c, y, x) - b.at(0, c, y, a.w - 1 - x)));
    CHECK(diff > 1e-6);
}

TEST_CASE("loss on probability maps") {
    const int w = 6, h = 5;
    LabelMap gf{LabelDomain::food, Image<std::uint8_t>(w, h, 0)};
    LabelMap gp{LabelDomain::plate, Image<std::uint8_t>(w, h, 0)};
    Rng rng(1);
    for (auto& v : gf.labels.data) v = std::uint8_t(rng.below(8));
    for (auto& v : gp.labels.data) v = std::uint8_t(rng.below(6));
    ProbabilityMaps onehot{ClassProbabilities(w, h, 8), ClassProbabilities(w, h, 6)};
    for (std::size_t i = 0; i < std::size_t(w * h); ++i) {
        onehot.food.at(i)[gf.labels.data[i]] = 1.0;
        onehot.plate.at(i)[gp.labels.data[i]] = 1.0;
    }
    CHECK(loss(onehot, gf, gp, 1, 1) < 1e-6);

    ProbabilityMaps uniform{ClassProbabilities(w, h, 8), ClassProbabilities(w, h, 6)};
    std::fill(uniform.food.values.begin(), uniform.food.values.end(), 1.0 / 8);
    std::fill(uniform.plate.values.begin(), uniform.plate.values.end(), 1.0 / 6);
    CHECK(loss(uniform, gf, gp, 1, 0) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
    CHECK(loss(uniform, gf, gp, 1, 0) == doctest::Approx(2.0794).epsilon(1e-4));

    ProbabilityMaps noisy{ClassProbabilities(w, h, 8), ClassProbabilities(w, h, 6)};
    for (auto* p : {&noisy.food, &noisy.plate})
        for (std::size_t i = 0; i < std::size_t(w * h); ++i) {
            auto d = p->at(i);
            double s = 0;
            for (double& v : d) s += (v = rng.uniform(0.01, 1));
            for (double& v : d) v /= s;
        }
    const double l1 = loss(noisy, gf, gp, 0.7, 1.3);
    CHECK(loss(noisy, gf, gp, 1.4, 2.6) == doctest::Approx(2 * l1).epsilon(1e-14));

    LabelMap wrong{LabelDomain::food, Image<std::uint8_t>(w + 1, h, 0)};
    CHECK_THROWS_AS(loss(noisy, wrong, gp, 1, 1), Error);
}

TEST_CASE("logit cross-entropy matches the probability-space loss") {
    Network net(tiny_config(), 3);
    auto s = blob_sample(tiny_config(), 4);
    auto out = net.forward(s.input, Mode::inference);
    const double ce = softmax_cross_entropy(out.food_logits, {s.food.data.data()}, 1.0, nullptr) +
                      softmax_cross_entropy(out.plate_logits, {s.plate.data.data()}, 1.0, nullptr);
    ProbabilityMaps p{softmax(out.food_logits, 0), softmax(out.plate_logits, 0)};
    CHECK(ce == doctest::Approx(loss(p, {LabelDomain::food, s.food}, {LabelDomain::plate, s.plate}, 1, 1)).epsilon(1e-12));
}

TEST_CASE("fast conv kernels agree with the serial reference") {
    using namespace mealscan::kernels;
    Rng rng(77);
    for (auto [in_c, size, out_c, k, stride] : std::vector<std::array<int, 5>>{
             {3, 9, 4, 3, 1}, {4, 16, 5, 3, 2}, {2, 7, 3, 1, 1}, {5, 8, 2, 3, 2}}) {
        const auto g = ConvGeometry::same(in_c, size, size, out_c, k, stride);
        const int batch = 3;
        std::vector<double> in(std::size_t(batch) * in_c * g.in_pixels()), w(std::size_t(out_c) * g.patch());
        std::vector<double> dout(std::size_t(batch) * out_c * g.out_pixels());
        for (double& v : in) v = rng.uniform(-1, 1);
        for (double& v : w) v = rng.uniform(-1, 1);
        for (double& v : dout) v = rng.uniform(-1, 1);

        std::vector<double> fast(dout.size()), ref(dout.size());
        conv_forward(g, batch, in.data(), w.data(), fast.data());
        for (int b = 0; b < batch; ++b)
            conv_forward_reference(g, in.data() + b * in_c * g.in_pixels(), w.data(),
                                   ref.data() + b * out_c * g.out_pixels());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(fast[i] == doctest::Approx(ref[i]).epsilon(1e-12));

        std::vector<double> din_f(in.size()), din_r(in.size()), dw_f(w.size()), dw_r(w.size());
        conv_backward(g, batch, in.data(), dout.data(), w.data(), din_f.data(), dw_f.data());
        for (int b = 0; b < batch; ++b) {
            conv_backward_data_reference(g, dout.data() + b * out_c * g.out_pixels(), w.data(),
                                         din_r.data() + b * in_c * g.in_pixels());
            conv_backward_weight_reference(g, in.data() + b * in_c * g.in_pixels(),
                                           dout.data() + b * out_c * g.out_pixels(), dw_r.data());
        }
        for (std::size_t i = 0; i < din_r.size(); ++i) CHECK(din_f[i] == doctest::Approx(din_r[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < dw_r.size(); ++i) CHECK(dw_f[i] == doctest::Approx(dw_r[i]).epsilon(1e-12));

        // Transposed conv: forward of the adjoint must match the reference, and <deconv(x), y> = <x, conv(y)>.
        std::vector<double> up_f(in.size()), up_r(in.size());
        deconv_forward(g, batch, dout.data(), w.data(), up_f.data());
        for (int b = 0; b < batch; ++b)
            deconv_forward_reference(g, dout.data() + b * out_c * g.out_pixels(), w.data(),
                                     up_r.data() + b * in_c * g.in_pixels());
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < up_r.size(); ++i) {
            CHECK(up_f[i] == doctest::Approx(up_r[i]).epsilon(1e-12));
            lhs += up_f[i] * in[i];
        }
        for (std::size_t i = 0; i < ref.size(); ++i) rhs += dout[i] * ref[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("gradient check: backprop matches central differences") {
    Network net(tiny_config(), 21);
    REQUIRE(net.parameter_count() < 10000);
    std::vector<Sample> batch{blob_sample(tiny_config(), 1), blob_sample(tiny_config(), 2)};
    auto r = gradient_check(net, batch, 1e-5, 100, 5);
    CHECK(r.checked >= 100);
    CHECK(r.batch_norm_checked >= 10);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.skipped_at_kink < r.checked);
}

TEST_CASE("zero-loss configuration is a stationary point") {
    Network net(tiny_config(), 22);
    auto s = blob_sample(tiny_config(), 3);
    std::fill(s.food.data.begin(), s.food.data.end(), std::uint8_t(2));
    std::fill(s.plate.data.begin(), s.plate.data.end(), std::uint8_t(1));
    zero_heads(net);
    auto& params = net.parameters();
    for (auto& p : params) {
        if (p.name == "food.head.bias")
            for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = k == 2 ? 1000 : -1000;
        if (p.name == "plate.head.bias")
            for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = k == 1 ? 1000 : -1000;
    }
    Gradients grads = net.zero_gradients();
    const double l = loss_and_gradients(net, {s}, 1, 1, grads);
    CHECK(l < 1e-12);
    double worst = 0;
    for (const auto& g : grads)
        for (double v : g) worst = std::max(worst, std::abs(v));
    CHECK(worst < 1e-8);
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
    EarlyStopping stop(10);
    int stopped_at = 0;
    for (int epoch = 1; epoch <= 80; ++epoch)
        if (stop.update(epoch, 1.0 + epoch)) {
            stopped_at = epoch;
            break;
        }
    CHECK(stopped_at == 11);
    CHECK(stop.best_epoch() == 1);

    EarlyStopping improving(3);
    for (int epoch = 1; epoch <= 20; ++epoch) CHECK_FALSE(improving.update(epoch, 100.0 - epoch));
}

TEST_CASE("training is deterministic and restores the best validation weights") {
    const NetworkConfig cfg = tiny_config();
    std::vector<Sample> train_set, val_set;
    for (int i = 0; i < 4; ++i) train_set.push_back(blob_sample(cfg, 100 + i));
    val_set.push_back(blob_sample(cfg, 200));
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.learning_rate = 1e-3;
    Network a(cfg, 9), b(cfg, 9);
    auto ra = train(a, train_set, val_set, tc, 5);
    auto rb = train(b, train_set, val_set, tc, 5);
    REQUIRE(ra.history.size() == 4);
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
        CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
        CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
    }
    CHECK(flat_params(a) == flat_params(b));
    double best = ra.initial_val_loss;
    for (const auto& e : ra.history) best = std::min(best, e.val_loss);
    CHECK(evaluate_loss(a, val_set, 1, 1) == doctest::Approx(best).epsilon(1e-12));

    tc.learning_rate = -1;
    CHECK_THROWS_AS(train(a, train_set, val_set, tc, 5), Error);
    tc.learning_rate = 1e-3;
    CHECK_THROWS_AS(train(a, {}, val_set, tc, 5), Error);
}

TEST_CASE("divergence aborts training") {
    const NetworkConfig cfg = tiny_config();
    std::vector<Sample> set{blob_sample(cfg, 1)};
    set[0].input.v[0] = std::nan("");
    TrainConfig tc;
    tc.max_epochs = 2;
    Network net(cfg, 1);
    try {
        train(net, set, set, tc, 1);
        FAIL("expected a training error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::training);
    }
}

TEST_CASE("checkpoint round trip reproduces outputs bit-exactly") {
    TempDir dir;
    Network net(tiny_config(), 31);
    // Move running statistics away from their initial values.
    net.forward(random_input(2, 64, 64, 1), Mode::train, true);
    save_checkpoint(net, dir / "net.ckpt");
    Network back = load_checkpoint(dir / "net.ckpt");
    CHECK(back.seed() == 31);
    CHECK(flat_params(back) == flat_params(net));
    auto in = random_input(1, 64, 64, 2);
    auto a = net.forward(in, Mode::inference);
    auto b = back.forward(in, Mode::inference);
    CHECK(a.food_logits.v == b.food_logits.v);
    CHECK(a.plate_logits.v == b.plate_logits.v);

    write_text_atomic(dir / "junk.ckpt", "not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), Error);
}

TEST_CASE("overfits eight synthetic images") {
    const NetworkConfig cfg;
    std::vector<Sample> set;
    for (int i = 0; i < 8; ++i) set.push_back(blob_sample(cfg, 500 + i));
    TrainConfig tc;
    tc.max_epochs = 200;
    tc.early_stop_patience = 200;
    tc.flip_augmentation = false;
    tc.learning_rate = 0.01;
    Network net(cfg, 3);
    train(net, set, set, tc, 8);
    auto acc = pixel_accuracy(net, set);
    MESSAGE("food accuracy " << acc.food << ", plate accuracy " << acc.plate);
    CHECK(acc.food > 0.95);
    CHECK(acc.plate > 0.95);
}

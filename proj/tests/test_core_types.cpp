#include "doctest.h"
#include "mkd/core_types.hpp"
#include "test_util.hpp"

using namespace mkd;

TEST_CASE("one_hot of a single class-0 pixel") {
  LabelMap y(1, 1, 1, 0);
  const Tensor4 h = one_hot(y, 3);
  CHECK(h(0, 0, 0, 0) == 1.0);
  CHECK(h(0, 0, 0, 1) == 0.0);
  CHECK(h(0, 0, 0, 2) == 0.0);
}

TEST_CASE("one_hot of an ignored pixel is the zero vector") {
  LabelMap y(1, 1, 1, kIgnore);
  const Tensor4 h = one_hot(y, 3);
  for (int c = 0; c < 3; ++c) CHECK(h(0, 0, 0, c) == 0.0);
}

TEST_CASE("one_hot channel sum counts pixels of that class") {
  LabelMap y(2, 3, 5, 2);
  const Tensor4 h = one_hot(y, 3);
  double s = 0;
  for (int b = 0; b < 2; ++b)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 5; ++c) s += h(b, r, c, 2);
  CHECK(s == 2 * 3 * 5);
}

TEST_CASE("one_hot rejects out-of-range labels") {
  LabelMap y(1, 1, 2, 0);
  y(0, 0, 1) = 3;
  CHECK_THROWS_AS(one_hot(y, 3), ValidationError);
}

TEST_CASE("argmax inverts one_hot and channel sums mark non-ignored pixels") {
  Rng rng(7);
  const LabelMap y = testing::random_labels(3, 6, 7, 5, rng, 0.2);
  const Tensor4 h = one_hot(y, 5);
  const LabelMap back = argmax_channels(h);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += h.values()[i * 5 + c];
    if (y.values()[i] == kIgnore) {
      CHECK(s == 0.0);
    } else {
      CHECK(s == 1.0);
      CHECK(back.values()[i] == y.values()[i]);
    }
  }
}

TEST_CASE("argmax ties resolve to the lowest index") {
  Tensor4 t(1, 1, 1, 2, 1.0);
  CHECK(argmax_channels(t)(0, 0, 0) == 0);
}

TEST_CASE("validate_config accepts the documented recipe") {
  TrainConfig c;
  c.gamma = 0.4;
  c.alpha = 1.5;
  c.beta = 1.0;
  c.tau = 0.95;
  CHECK(validate_config(c) == c);
}

TEST_CASE("validate_config names the offending field") {
  auto message_for = [](TrainConfig c) {
    try {
      validate_config(c);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  TrainConfig c;
  c.gamma = 1.2;
  CHECK(message_for(c).find("gamma") != std::string::npos);
  c = TrainConfig{};
  c.lr0 = 0;
  CHECK(message_for(c).find("lr0") != std::string::npos);
  c = TrainConfig{};
  c.alpha = -1;
  CHECK(message_for(c).find("alpha") != std::string::npos);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK(message_for(c).find("momentum") != std::string::npos);
  c = TrainConfig{};
  c.tau = 1.5;
  CHECK(message_for(c).find("tau") != std::string::npos);
  c = TrainConfig{};
  c.num_classes = 1;
  CHECK(message_for(c).find("num_classes") != std::string::npos);
  c = TrainConfig{};
  c.iters_max = 0;
  CHECK(message_for(c).find("iters_max") != std::string::npos);
}

TEST_CASE("validate_images rejects out-of-range and non-finite values") {
  ImageBatch x(1, 2, 2, 3, 0.5);
  CHECK_NOTHROW(validate_images(x));
  x(0, 1, 1, 2) = 1.5;
  CHECK_THROWS_AS(validate_images(x), ValidationError);
  x(0, 1, 1, 2) = std::nan("");
  CHECK_THROWS_AS(validate_images(x), ValidationError);
}

#include <gtest/gtest.h>

#include <random>

#include "soundstream/ops.hpp"
#include "soundstream/tensor.hpp"
#include "support/gradcheck.hpp"

namespace ss = soundstream;
namespace ops = soundstream::ops;

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(ss::Tensor({2, 3}, std::vector<float>(5)), std::invalid_argument);
  EXPECT_THROW(ss::Tensor(ss::Shape{0, 3}), std::invalid_argument);
  ss::Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(-1), 3);
}

TEST(Tensor, HandlesShareStorage) {
  ss::Tensor a = ss::Tensor::from({1, 2, 3});
  ss::Tensor b = a;
  b.data()[0] = 7.0f;
  EXPECT_EQ(a[0], 7.0f);
  ss::Tensor c = a.detach();
  c.data()[1] = 9.0f;
  EXPECT_EQ(a[1], 2.0f);
}

TEST(Tape, SumGivesAllOnesGradient) {
  ss::Tensor x = ss::Tensor::from({0.5f, -2.0f, 3.0f, 4.0f}, true);
  ss::Tape tape;
  ss::Tensor loss;
  {
    ss::TapeScope scope(tape);
    loss = ops::sum(x);
  }
  ss::backward(loss, tape);
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Tape, SquaredNormGradient) {
  ss::Tensor x = ss::Tensor::from({1.0f, 2.0f}, true);
  ss::Tape tape;
  ss::Tensor loss;
  {
    ss::TapeScope scope(tape);
    loss = ops::sum(ops::mul(x, x));
  }
  ss::backward(loss, tape);
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
}

TEST(Tape, RejectsNonScalarLossAndSecondBackward) {
  ss::Tensor x = ss::Tensor::from({1.0f, 2.0f}, true);
  ss::Tape tape;
  ss::Tensor y, loss;
  {
    ss::TapeScope scope(tape);
    y = ops::scale(x, 2.0f);
    loss = ops::sum(y);
  }
  EXPECT_THROW(ss::backward(y, tape), std::invalid_argument);
  ss::backward(loss, tape);
  EXPECT_THROW(ss::backward(loss, tape), std::logic_error);
  tape.clear();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, NothingRecordedWithoutScopeOrGradInputs) {
  ss::Tensor x = ss::Tensor::from({1.0f, 2.0f}, true);
  ss::Tensor c = ss::Tensor::from({1.0f, 2.0f});
  ss::Tape tape;
  (void)ops::scale(x, 2.0f);  // no scope
  {
    ss::TapeScope scope(tape);
    (void)ops::scale(c, 2.0f);  // constant input
    {
      ss::NoGradScope off;
      (void)ops::scale(x, 2.0f);
    }
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, SharedInputAccumulatesFromBothUses) {
  ss::Tensor x = ss::Tensor::from({3.0f}, true);
  ss::Tape tape;
  ss::Tensor loss;
  {
    ss::TapeScope scope(tape);
    loss = ops::sum(ops::add(ops::scale(x, 2.0f), ops::mul(x, x)));
  }
  ss::backward(loss, tape);
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f + 6.0f);
}

TEST(Tape, DeterministicForwardAndBackward) {
  auto run = [] {
    std::mt19937_64 rng(42);
    auto x = ss::testing::random_tensor({3, 50}, rng);
    auto w = ss::testing::random_tensor({4, 3, 3}, rng, 0.3f, true);
    auto b = ss::testing::random_tensor({4}, rng, 0.1f, true);
    ss::Tape tape;
    ss::Tensor loss;
    {
      ss::TapeScope scope(tape);
      loss = ss::testing::random_projection(ops::elu(ops::conv1d(x, w, b, {.stride = 2, .dilation = 1})), 7);
    }
    ss::backward(loss, tape);
    std::vector<float> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

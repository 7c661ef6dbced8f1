#pragma once

#include <gtest/gtest.h>

#include "gradient.hpp"

namespace testing_util {

template <class T>
void expect_gradients_match(std::vector<cof::Var<T>> inputs, const std::function<cof::Var<T>()>& loss_fn,
                            double tol = 1e-3) {
  const double err = gradient_relative_error<T>(std::move(inputs), loss_fn);
  EXPECT_LE(err, tol) << "relative gradient error " << err;
}

}  // namespace testing_util

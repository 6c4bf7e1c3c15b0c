#ifndef TARO_TARO_HPP
#define TARO_TARO_HPP

#include "taro/adversary_aware.hpp"
#include "taro/attack.hpp"
#include "taro/autodiff.hpp"
#include "taro/bench.hpp"
#include "taro/checks.hpp"
#include "taro/classifier.hpp"
#include "taro/config.hpp"
#include "taro/dataset.hpp"
#include "taro/denoiser.hpp"
#include "taro/gmm.hpp"
#include "taro/grad_check.hpp"
#include "taro/mlp.hpp"
#include "taro/purifier.hpp"
#include "taro/random.hpp"
#include "taro/schedule.hpp"
#include "taro/serialize.hpp"
#include "taro/tensor.hpp"
#include "taro/theory.hpp"
#include "taro/toy_purifiers.hpp"
#include "taro/train.hpp"

#endif // TARO_TARO_HPP

#pragma once

#include <sggnn/autodiff.hpp>
#include <sggnn/config.hpp>
#include <sggnn/corpus.hpp>
#include <sggnn/error.hpp>
#include <sggnn/eval.hpp>
#include <sggnn/graph.hpp>
#include <sggnn/matrix.hpp>
#include <sggnn/params.hpp>
#include <sggnn/relation.hpp>
#include <sggnn/trainer.hpp>

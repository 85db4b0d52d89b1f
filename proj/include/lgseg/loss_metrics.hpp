#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lgseg/tensor.hpp"

namespace lgseg {

// Pixel-text contrastive loss: per-pixel binary cross-entropy between the
// prototype/pixel dot products and the stride-4 ground truth, averaged over
// pixels. Computed in logit form, never through sigma then log.
Tensor contrastive_loss(const Tensor& logits, const std::vector<uint8_t>& gt4);

struct IoUCounts {
  int64_t intersection = 0;
  int64_t union_count = 0;
  double iou = 0.0;  // 1.0 when both masks are empty
};

IoUCounts iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

struct EvalRecord {
  int64_t intersection = 0;
  int64_t union_count = 0;
  double iou = 0.0;
  int length = 0;  // expression word count
  int bucket = 0;
};

double oiou(const std::vector<EvalRecord>& records);  // sum I / sum U
double miou(const std::vector<EvalRecord>& records);  // mean of per-sample IoU
// fraction of records with IoU strictly above the threshold
double precision_at(const std::vector<EvalRecord>& records, double threshold);

// word-count buckets [1,3), [3,8), [8,13), [13,inf)
int bucketize(int length);

struct MetricsRow {
  std::string split;
  int n = 0;
  double o_iou = 0.0, m_iou = 0.0, p50 = 0.0, p70 = 0.0, p90 = 0.0;
  std::array<double, 4> bucket_oiou = {0, 0, 0, 0};
  std::array<bool, 4> bucket_present = {false, false, false, false};
};

MetricsRow compute_metrics(const std::string& split,
                           const std::vector<EvalRecord>& records);

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

}  // namespace lgseg

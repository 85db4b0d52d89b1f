#include "lgseg/loss_metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lgseg {

Tensor contrastive_loss(const Tensor& logits, const std::vector<uint8_t>& gt4) {
  if (logits.size() != static_cast<int64_t>(gt4.size()))
    throw std::invalid_argument("contrastive_loss: " + std::to_string(gt4.size()) +
                                " labels for " + std::to_string(logits.size()) +
                                " logits");
  std::vector<double> targets(gt4.size());
  for (size_t i = 0; i < gt4.size(); ++i) targets[i] = gt4[i] ? 1.0 : 0.0;
  return bce_with_logits_mean(logits, targets);
}

IoUCounts iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("iou: mask sizes differ: " +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(gt.size()));
  IoUCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.intersection += (p && g) ? 1 : 0;
    c.union_count += (p || g) ? 1 : 0;
  }
  // empty-vs-empty guard: a correct empty prediction scores 1
  c.iou = c.union_count == 0
              ? 1.0
              : static_cast<double>(c.intersection) / static_cast<double>(c.union_count);
  return c;
}

namespace {

void require_nonempty(const std::vector<EvalRecord>& records, const char* what) {
  if (records.empty())
    throw std::invalid_argument(std::string(what) + ": empty record set");
}

}  // namespace

double oiou(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "oiou");
  int64_t inter = 0, uni = 0;
  for (const EvalRecord& r : records) {
    inter += r.intersection;
    uni += r.union_count;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "miou");
  double s = 0.0;
  for (const EvalRecord& r : records) s += r.iou;
  return s / static_cast<double>(records.size());
}

double precision_at(const std::vector<EvalRecord>& records, double threshold) {
  require_nonempty(records, "precision_at");
  int64_t hits = 0;
  for (const EvalRecord& r : records) hits += r.iou > threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

int bucketize(int length) {
  if (length < 1) throw std::invalid_argument("bucketize: length must be >= 1");
  if (length >= 13) return 3;
  if (length >= 8) return 2;
  if (length >= 3) return 1;
  return 0;
}

MetricsRow compute_metrics(const std::string& split,
                           const std::vector<EvalRecord>& records) {
  require_nonempty(records, "compute_metrics");
  MetricsRow row;
  row.split = split;
  row.n = static_cast<int>(records.size());
  row.o_iou = oiou(records);
  row.m_iou = miou(records);
  row.p50 = precision_at(records, 0.5);
  row.p70 = precision_at(records, 0.7);
  row.p90 = precision_at(records, 0.9);
  for (int b = 0; b < 4; ++b) {
    std::vector<EvalRecord> bucket;
    for (const EvalRecord& r : records)
      if (r.bucket == b) bucket.push_back(r);
    if (!bucket.empty()) {
      row.bucket_oiou[b] = oiou(bucket);
      row.bucket_present[b] = true;
    }
  }
  return row;
}

std::string metrics_csv_header() {
  return "split,n,oIoU,mIoU,P@0.5,P@0.7,P@0.9,"
         "bucket0_oIoU,bucket1_oIoU,bucket2_oIoU,bucket3_oIoU";
}

std::string metrics_csv_line(const MetricsRow& row) {
  std::ostringstream os;
  os.precision(17);
  os << row.split << ',' << row.n << ',' << row.o_iou << ',' << row.m_iou << ','
     << row.p50 << ',' << row.p70 << ',' << row.p90;
  for (int b = 0; b < 4; ++b) {
    os << ',';
    if (row.bucket_present[b])
      os << row.bucket_oiou[b];
    else
      os << "na";
  }
  return os.str();
}

}  // namespace lgseg

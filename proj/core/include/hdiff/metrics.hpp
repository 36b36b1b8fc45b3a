#ifndef HDIFF_METRICS_HPP
#define HDIFF_METRICS_HPP

#include <map>
#include <string>
#include <vector>

#include "hdiff/tensor.hpp"

namespace hdiff {

// Fidelity inside the lesion mask only. Intensities are expected on a common
// scale (peak = dynamic range, default 1.0 for [0,1] data).
double masked_mse(const Tensor& pred, const Tensor& truth, const Tensor& mask);
double masked_psnr(const Tensor& pred, const Tensor& truth, const Tensor& mask, double peak = 1.0);

// 3D SSIM: 7x7x7 windows, Gaussian weighting sigma=1.5, K1=0.01, K2=0.03,
// dynamic range 1.0; averaged over windows whose center voxel is masked and
// whose 7x7x7 support lies fully inside the volume.
double masked_ssim(const Tensor& pred, const Tensor& truth, const Tensor& mask);

// Overlap of one label class between two label grids, restricted to the mask;
// 1.0 when the class is absent from both.
double dice(const Tensor& labels_a, const Tensor& labels_b, int class_id, const Tensor& mask);

struct VolumeMetrics {
    std::string name;
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::map<int, double> dice_by_class;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample std, 0 for a single volume
};

struct MetricsReport {
    int report_version = 1;
    std::vector<VolumeMetrics> per_volume;
    Aggregate mse, psnr, ssim;
    std::map<int, Aggregate> dice_by_class;
};

// Per-volume metrics plus mean +/- sample std. Label vectors may be empty
// (no Dice columns) but must otherwise align with the volumes.
MetricsReport evaluate_suite(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths,
                             const std::vector<Tensor>& masks, const std::vector<Tensor>& pred_labels = {},
                             const std::vector<Tensor>& truth_labels = {},
                             const std::vector<std::string>& names = {});

void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);

}  // namespace hdiff

#endif

#include "core/kitti.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace miscal {

namespace {

std::string frame_name(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", frame);
  return buf;
}

Eigen::Matrix<double, 3, 4> values_to_3x4(const std::vector<double>& v) {
  Eigen::Matrix<double, 3, 4> m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r) * 4 + c];
  return m;
}

}  // namespace

KittiCalib parse_kitti_calib(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFoundError("calibration file not found: " + path);
  KittiCalib calib;
  bool seen[5] = {false, false, false, false, false};
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> vals;
    double x;
    while (is >> x) vals.push_back(x);
    int slot = -1;
    if (key == "P0") slot = 0;
    else if (key == "P1") slot = 1;
    else if (key == "P2") slot = 2;
    else if (key == "P3") slot = 3;
    else if (key == "Tr") slot = 4;
    else continue;  // tolerate extra keys
    if (vals.size() != 12)
      throw ParseError(path + ": key '" + key + "' has " + std::to_string(vals.size()) +
                       " values, expected 12");
    const Eigen::Matrix<double, 3, 4> m = values_to_3x4(vals);
    if (slot < 4) {
      calib.p[slot] = m;
    } else {
      calib.tr.rotation = m.leftCols<3>();
      calib.tr.translation = m.col(3);
    }
    seen[slot] = true;
  }
  const char* names[5] = {"P0", "P1", "P2", "P3", "Tr"};
  for (int i = 0; i < 5; ++i)
    if (!seen[i]) throw ParseError(path + ": missing key '" + std::string(names[i]) + "'");
  return calib;
}

PointCloud load_kitti_velodyne(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FileNotFoundError("velodyne scan not found: " + path);
  const std::streamsize bytes = f.tellg();
  if (bytes % 16 != 0)
    throw ParseError(path + ": size " + std::to_string(bytes) + " is not a multiple of 16");
  f.seekg(0);
  const std::size_t n = static_cast<std::size_t>(bytes) / 16;
  std::vector<float> raw(n * 4);
  f.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!f) throw ParseError(path + ": short read");
  PointCloud cloud;
  cloud.points.resize(n);
  cloud.intensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points[i] = Eigen::Vector3f(raw[4 * i], raw[4 * i + 1], raw[4 * i + 2]);
    cloud.intensity[i] = raw[4 * i + 3];
  }
  return cloud;
}

Frame load_kitti_frame(const std::string& root, const std::string& sequence, int frame) {
  const fs::path seq_dir = fs::path(root) / "sequences" / sequence;
  const std::string name = frame_name(frame);
  const fs::path image_path = seq_dir / "image_2" / (name + ".png");
  const fs::path velo_path = seq_dir / "velodyne" / (name + ".bin");
  const fs::path calib_path = seq_dir / "calib.txt";

  if (!fs::exists(image_path)) throw FileNotFoundError("image not found: " + image_path.string());
  cv::Mat bgr = cv::imread(image_path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ParseError("cannot decode image: " + image_path.string());

  Frame out;
  out.id = sequence + "/" + name;
  out.image.width = bgr.cols;
  out.image.height = bgr.rows;
  out.image.rgb.resize(static_cast<std::size_t>(bgr.cols) * bgr.rows * 3);
  cv::Mat rgb_view(bgr.rows, bgr.cols, CV_8UC3, out.image.rgb.data());
  cv::cvtColor(bgr, rgb_view, cv::COLOR_BGR2RGB);

  out.cloud = load_kitti_velodyne(velo_path.string());

  const KittiCalib kc = parse_kitti_calib(calib_path.string());
  out.calib.extrinsic = kc.tr;
  out.calib.rect_rotation = Eigen::Matrix3d::Identity();  // folded into Tr for odometry
  out.calib.projection = kc.p[2];                         // image_2 camera
  out.calib.width = bgr.cols;
  out.calib.height = bgr.rows;
  return out;
}

std::vector<int> list_kitti_frames(const std::string& root, const std::string& sequence) {
  const fs::path velo_dir = fs::path(root) / "sequences" / sequence / "velodyne";
  if (!fs::exists(velo_dir))
    throw FileNotFoundError("sequence directory not found: " + velo_dir.string());
  std::vector<int> frames;
  for (const auto& entry : fs::directory_iterator(velo_dir)) {
    if (entry.path().extension() != ".bin") continue;
    try {
      frames.push_back(std::stoi(entry.path().stem().string()));
    } catch (const std::exception&) {
      // non-numeric names are not frames
    }
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

void SplitSpec::validate() const {
  for (const std::string& s : train_sequences)
    if (s == test_sequence)
      throw std::invalid_argument("split: sequence '" + s + "' appears in both train and test");
}

}  // namespace miscal

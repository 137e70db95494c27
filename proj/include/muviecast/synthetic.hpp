#pragma once

// Ray-cast test scenes with known geometry.

#include "muviecast/dataset.hpp"

namespace muvie::synthetic {

struct RenderedScene {
  Scene scene;
  std::vector<Tensor> depths;  // [1, H, W] camera-space depth per view
};

struct PlaneOptions {
  int width = 128;
  int height = 96;
  int views = 3;
  double depth = 5.0;       // plane z in the reference frame
  double baseline = 0.35;   // translation step along x between views
  double focal = 0.9;       // in units of image width
  int num_depth = 48;
  double depth_min = 3.5;
  double depth_max = 7.0;
};

// Fronto-parallel textured plane seen from horizontally translated cameras.
RenderedScene make_plane_scene(const PlaneOptions& opts = {});

struct CubeOptions {
  int width = 160;
  int height = 128;
  int views = 4;
  double orbit_radius = 6.0;
  double orbit_degrees = 30.0;  // total angular span of the camera arc
  double cube_half = 1.0;
  double wall_z = 2.5;          // back wall plane, world z
  double focal = 1.0;           // in units of image width
  int num_depth = 48;
  double depth_min = 3.5;
  double depth_max = 11.5;
};

// Textured cube in front of a textured back wall, cameras on an arc looking
// at the cube center (the world origin).
RenderedScene make_cube_scene(const CubeOptions& opts = {});

// Procedural RGB solid texture in [0, 1], smooth with mid frequencies.
Eigen::Vector3d solid_texture(const Eigen::Vector3d& p);

// A stylized-looking image of the given size (stripes and blobs).
Tensor make_style_image(int height, int width, unsigned seed = 1);

// Rescales every image in the scene to multiples of 1/255 so PNG round-trips
// are exact.
void quantize_images(Scene& scene);

}  // namespace muvie::synthetic

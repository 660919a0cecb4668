from spack.package import *


class EigenMini(CMakePackage):
    """Eigen is a C++ template library for linear algebra (abridged)."""

    homepage = "https://eigen.tuxfamily.org/"
    git = "https://gitlab.com/libeigen/eigen.git"
    url = "https://gitlab.com/libeigen/eigen/-/archive/3.4.0/eigen-3.4.0.tar.gz"

    license("MPL-2.0")

    version("master", branch="master")
    version("3.4.0", sha256="8586084f71f9bde545ee7fa6d00288b264a2b7ac3607b974e54d13e7162c1c72")
    version("3.3.9", sha256="7985975b787340124786f092b3a07d594b2e9cd53bbfe5f3d9b1daee7d55f56f")

    variant("nightly", description="run Nightly test", default=False)
    variant("build_type", default="RelWithDebInfo", description="The build type to build", values=("Debug", "Release", "RelWithDebInfo"))

    depends_on("cxx", type="build")
    depends_on("cmake@3.5.0:", type="build")

    def cmake_args(self):
        args = []
        if self.spec.satisfies("@:3.4.0"):
            args.append(self.define("EIGEN_TEST_CXX11", True))
        return args

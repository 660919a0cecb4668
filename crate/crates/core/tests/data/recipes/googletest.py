from spack.package import *


class Googletest(CMakePackage):
    """Google test framework for C++.  Also called gtest."""

    homepage = "https://github.com/google/googletest"
    url = "https://github.com/google/googletest/archive/release-1.10.0.tar.gz"
    git = "https://github.com/google/googletest"

    license("BSD-3-Clause")

    version("main", branch="main")
    version("1.15.2", sha256="7b42b4d6ed48810c5362c265a17faebe90dc2373c885e5216439d37927f02926")
    version("1.14.0", sha256="8ad598c73ad796e0d8280b082cebd82a630d73e73cd3c70057938a6501bba5d7")
    version("1.12.1", sha256="81964fe578e9bd7c94dfdb09c8e4d6e6759e19967e397dbea48d1c10e45d0df2")

    variant("gmock", default=True, description="Build with gmock")
    variant("pthreads", default=True, description="Build multithreaded version with pthreads")
    variant("shared", default=True, description="Build shared libraries (DLLs)")
    variant("absl", default=False, when="@1.12.1:", description="Build with abseil and RE2")
    variant("cxxstd", default="14", values=("98", "11", "14", "17", "20"), multi=False, description="Use the specified C++ standard when building")

    depends_on("c", type="build")
    depends_on("cxx", type="build")
    depends_on("abseil-cpp", when="+absl")
    depends_on("re2", when="+absl")

    conflicts("cxxstd=98", when="@1.9:")
    conflicts("cxxstd=11", when="@1.13:")

    def cmake_args(self):
        spec = self.spec
        args = [
            self.define_from_variant("gtest_disable_pthreads", "pthreads"),
            self.define_from_variant("BUILD_SHARED_LIBS", "shared"),
            self.define_from_variant("CMAKE_CXX_STANDARD", "cxxstd"),
            self.define_from_variant("BUILD_GMOCK", "gmock"),
        ]
        if spec.satisfies("@1.12.1:"):
            args.append(self.define_from_variant("GTEST_HAS_ABSL", "absl"))
        return args

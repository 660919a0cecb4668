from spack.package import *


class YamlCpp(CMakePackage):
    """A YAML parser and emitter in C++"""

    homepage = "https://github.com/jbeder/yaml-cpp"
    url = "https://github.com/jbeder/yaml-cpp/archive/yaml-cpp-0.5.3.tar.gz"
    git = "https://github.com/jbeder/yaml-cpp.git"

    license("MIT")

    version("develop", branch="master")
    version("0.8.0", sha256="fbe74bbdcee21d656715688706da3c8becfd946d92cd44705cc6098bb23b3a16")
    version("0.7.0", sha256="43e6a9fcb146ad871515f0d0873947e5d497a1c9c60c58cb102a97b47208b7c3")
    version("0.6.3", sha256="77ea1b90b3718aa0c324207cb29418f5bced2354c2e483a9523d98c3460af1ed")

    variant("shared", default=True, description="Build shared instead of static libraries")
    variant("pic", default=True, description="Build with position independent code")
    variant("tests", default=False, description="Build yaml-cpp tests using internal gtest")

    depends_on("cxx", type="build")
    depends_on("boost@:1.66", when="@0.5.0:0.5.3")
    depends_on("cmake@3.4:", type="build", when="@0.7.0:")

    conflicts("%gcc@:4.7", when="@0.6.0:", msg="versions 0.6.0: require c++11 support")
    conflicts("%clang@:3.3.0", when="@0.6.0:", msg="versions 0.6.0: require c++11 support")

    def cmake_args(self):
        options = []
        options.extend(
            [
                self.define_from_variant("BUILD_SHARED_LIBS", "shared"),
                self.define_from_variant("YAML_BUILD_SHARED_LIBS", "shared"),
                self.define_from_variant("CMAKE_POSITION_INDEPENDENT_CODE", "pic"),
                self.define_from_variant("YAML_CPP_BUILD_TESTS", "tests"),
            ]
        )
        return options

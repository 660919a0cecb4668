from spack.package import *


class HpctoolkitMini(AutotoolsPackage):
    """Performance tools subset used for parser coverage."""

    homepage = "http://hpctoolkit.org"
    git = "https://gitlab.com/hpctoolkit/hpctoolkit.git"

    version("develop", branch="develop")
    version("2023.08.1", tag="2023.08.1", commit="753a72affd584a5e72fe153d1e8c47a394a3886e")

    variant("mpi", default=False, description="Build hpcprof-mpi")
    variant("papi", default=True, description="Use PAPI instead of perfmon")
    variant("cuda", default=False, description="Support CUDA on NVIDIA GPUs")

    depends_on("c", type="build")
    depends_on("cxx", type="build")
    depends_on("boost@1.71.0:")
    depends_on("elfutils+bzip2+xz~nls")
    depends_on("intel-tbb@2020.3", when="@:2022")
    depends_on("libunwind@1.6:")
    depends_on("mpi", when="+mpi")
    depends_on("papi", when="+papi")
    depends_on("cuda", when="+cuda")
    depends_on("xz+pic libs=static", type="link")

    conflicts("+cuda", when="@:2020.02")

    def configure_args(self):
        spec = self.spec
        args = ["--with-boost=%s" % spec["boost"].prefix]
        args += self.enable_or_disable("mpi")
        return args

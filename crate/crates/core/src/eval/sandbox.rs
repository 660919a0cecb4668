use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CommandOutput, EvalError, HermeticConfig, HermeticSandbox, Sandbox, Stage, Step, Workspace};

const NAMESPACE: &str = "recipesynth";
const POLL: Duration = Duration::from_millis(20);

/// Invocation strings for the package manager. Placeholders: `{spack}`,
/// `{config}` (config scope dir), `{spec}` (namespace-qualified package),
/// `{package}`, `{work}`, `{cache_flags}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandTemplates {
    pub spack: String,
    pub load: String,
    pub concretize: String,
    pub install: String,
    pub audit: String,
    pub cache_on: String,
    pub cache_off: String,
}

impl Default for CommandTemplates {
    fn default() -> Self {
        Self {
            spack: "spack".into(),
            load: "{spack} -C {config} info {spec}".into(),
            concretize: "{spack} -C {config} spec {spec}".into(),
            install: "{spack} -C {config} install --fail-fast {cache_flags} {spec}".into(),
            audit: "{spack} -C {config} audit packages {package}".into(),
            cache_on: "--use-buildcache package:never,dependencies:auto".into(),
            cache_off: "--no-cache".into(),
        }
    }
}

impl CommandTemplates {
    fn render(&self, step: Step, package: &str, work: &Path, use_buildcache: bool) -> String {
        let template = match step {
            Step::Stage(Stage::Load) => &self.load,
            Step::Stage(Stage::Concretize) => &self.concretize,
            Step::Stage(Stage::Install) => &self.install,
            Step::Audit => &self.audit,
        };
        let cache = if use_buildcache { &self.cache_on } else { &self.cache_off };
        template
            .replace("{spack}", &self.spack)
            .replace("{config}", &shell_quote(&work.join("config").to_string_lossy()))
            .replace("{spec}", &format!("{NAMESPACE}.{package}"))
            .replace("{package}", package)
            .replace("{work}", &shell_quote(&work.to_string_lossy()))
            .replace("{cache_flags}", cache)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxKind {
    Container,
    Process,
    Hermetic,
}

/// Sandbox selection and settings, as read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub kind: SandboxKind,
    /// `docker` or `podman`.
    pub runtime: String,
    pub image: String,
    /// Passed as `--network`; `None` keeps the runtime default.
    pub network: Option<String>,
    /// Parent of per-evaluation work directories; the system temp dir when unset.
    pub work_root: Option<PathBuf>,
    pub use_buildcache: bool,
    pub templates: CommandTemplates,
    pub hermetic: HermeticConfig,
    /// Evaluations allowed to run at once.
    pub max_parallel: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            kind: SandboxKind::Container,
            runtime: "docker".into(),
            image: "spack/ubuntu-jammy:latest".into(),
            network: None,
            work_root: None,
            use_buildcache: true,
            templates: CommandTemplates::default(),
            hermetic: HermeticConfig::default(),
            max_parallel: 2,
        }
    }
}

impl SandboxConfig {
    pub fn build(&self) -> Box<dyn Sandbox> {
        let work_root = self.work_root.clone().unwrap_or_else(std::env::temp_dir);
        match self.kind {
            SandboxKind::Hermetic => Box::new(HermeticSandbox::new(self.hermetic.clone())),
            SandboxKind::Process => Box::new(ProcessSandbox {
                work_root,
                templates: self.templates.clone(),
                use_buildcache: self.use_buildcache,
            }),
            SandboxKind::Container => Box::new(ContainerSandbox {
                runtime: self.runtime.clone(),
                image: self.image.clone(),
                network: self.network.clone(),
                work_root,
                templates: self.templates.clone(),
                use_buildcache: self.use_buildcache,
            }),
        }
    }
}

fn sandbox_err<'a>(what: &str, path: &'a Path) -> impl FnOnce(std::io::Error) -> EvalError + 'a {
    let what = what.to_string();
    move |e| EvalError::Sandbox(format!("{what} {}: {e}", path.display()))
}

/// Writes the package repository and config scope:
///
/// ```text
/// <work>/repo/repo.yaml
/// <work>/repo/packages/<package>/package.py
/// <work>/config/{repos,config}.yaml
/// ```
///
/// The config scope points install tree, stages and caches into `<work>`.
fn place_recipe(work: &Path, package: &str, recipe_text: &str) -> Result<(), EvalError> {
    let pkg_dir = work.join("repo").join("packages").join(package);
    fs::create_dir_all(&pkg_dir).map_err(sandbox_err("cannot create", &pkg_dir))?;
    let config = work.join("config");
    fs::create_dir_all(&config).map_err(sandbox_err("cannot create", &config))?;
    let w = work.display();
    let files = [
        (work.join("repo").join("repo.yaml"), format!("repo:\n  namespace: {NAMESPACE}\n")),
        (pkg_dir.join("package.py"), recipe_text.to_string()),
        (config.join("repos.yaml"), format!("repos:\n  - {w}/repo\n")),
        (
            config.join("config.yaml"),
            format!(
                "config:\n  install_tree:\n    root: {w}/opt\n  build_stage:\n    - {w}/stage\n  source_cache: {w}/cache/source\n  misc_cache: {w}/cache/misc\n  test_stage: {w}/cache/test\n"
            ),
        ),
    ];
    for (path, body) in files {
        fs::write(&path, body).map_err(sandbox_err("cannot write", &path))?;
    }
    Ok(())
}

fn new_workdir(root: &Path) -> Result<tempfile::TempDir, EvalError> {
    fs::create_dir_all(root).map_err(sandbox_err("cannot create", root))?;
    tempfile::Builder::new()
        .prefix("recipesynth-")
        .tempdir_in(root)
        .map_err(sandbox_err("cannot create work dir in", root))
}

fn package_env(work: &Path) -> Vec<(String, String)> {
    vec![
        ("SPACK_DISABLE_LOCAL_CONFIG".into(), "1".into()),
        ("SPACK_USER_CACHE_PATH".into(), work.join("user-cache").display().to_string()),
        ("SPACK_USER_CONFIG_PATH".into(), work.join("user-config").display().to_string()),
    ]
}

/// Runs `cmd` with stdout and stderr into one log file under `work`, killing
/// it on timeout. `on_timeout` runs before the kill (e.g. to stop a container).
fn run_with_timeout(mut cmd: Command, work: &Path, timeout: Duration, on_timeout: impl FnOnce()) -> Result<CommandOutput, EvalError> {
    let log_path = work.join("step.log");
    let log = fs::File::create(&log_path).map_err(sandbox_err("cannot create", &log_path))?;
    let log_err = log.try_clone().map_err(sandbox_err("cannot reopen", &log_path))?;
    cmd.stdin(Stdio::null()).stdout(log).stderr(log_err);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let start = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| EvalError::Sandbox(format!("cannot start {:?}: {e}", cmd.get_program())))?;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| EvalError::Sandbox(e.to_string()))? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            timed_out = true;
            on_timeout();
            #[cfg(unix)]
            {
                // the whole process group, so package-manager children go too
                let _ = Command::new("kill")
                    .args(["-KILL", "--", &format!("-{}", child.id())])
                    .stdout(Stdio::null())
                    .stderr(Stdio::null())
                    .status();
            }
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(POLL);
    };
    let output = String::from_utf8_lossy(&fs::read(&log_path).map_err(sandbox_err("cannot read", &log_path))?).into_owned();
    Ok(CommandOutput {
        exit_code: status.and_then(|s| s.code()).unwrap_or(-1),
        output,
        timed_out,
        duration: start.elapsed(),
    })
}

/// Runs the package manager directly on the host through `sh -c`.
///
/// Not isolating: the recipe's build runs with the caller's privileges. The
/// config scope keeps the package manager's own writes in the work directory.
#[derive(Debug, Clone)]
pub struct ProcessSandbox {
    pub work_root: PathBuf,
    pub templates: CommandTemplates,
    pub use_buildcache: bool,
}

impl ProcessSandbox {
    pub fn new(work_root: PathBuf, templates: CommandTemplates) -> Self {
        Self {
            work_root,
            templates,
            use_buildcache: true,
        }
    }
}

impl Sandbox for ProcessSandbox {
    fn id(&self) -> String {
        "process (non-isolating)".into()
    }

    fn prepare(&self, package: &str, recipe_text: &str) -> Result<Box<dyn Workspace>, EvalError> {
        let dir = new_workdir(&self.work_root)?;
        place_recipe(dir.path(), package, recipe_text)?;
        Ok(Box::new(ProcessWorkspace {
            dir,
            package: package.to_string(),
            sandbox: self.clone(),
        }))
    }
}

struct ProcessWorkspace {
    dir: tempfile::TempDir,
    package: String,
    sandbox: ProcessSandbox,
}

impl Workspace for ProcessWorkspace {
    fn id(&self) -> String {
        format!("process:{}", self.dir.path().display())
    }

    fn run(&mut self, step: Step, timeout: Duration) -> Result<CommandOutput, EvalError> {
        let work = self.dir.path();
        let line = self.sandbox.templates.render(step, &self.package, work, self.sandbox.use_buildcache);
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(line).current_dir(work).envs(package_env(work));
        run_with_timeout(cmd, work, timeout, || {})
    }
}

/// Runs each step in a fresh container of `image` with the work directory
/// mounted at the same path.
#[derive(Debug, Clone)]
pub struct ContainerSandbox {
    pub runtime: String,
    pub image: String,
    pub network: Option<String>,
    pub work_root: PathBuf,
    pub templates: CommandTemplates,
    pub use_buildcache: bool,
}

static CONTAINER_SEQ: AtomicU64 = AtomicU64::new(0);

impl Sandbox for ContainerSandbox {
    fn id(&self) -> String {
        format!("container:{}:{}", self.runtime, self.image)
    }

    fn prepare(&self, package: &str, recipe_text: &str) -> Result<Box<dyn Workspace>, EvalError> {
        let dir = new_workdir(&self.work_root)?;
        place_recipe(dir.path(), package, recipe_text)?;
        let name = format!(
            "recipesynth-{}-{}",
            std::process::id(),
            CONTAINER_SEQ.fetch_add(1, Ordering::Relaxed)
        );
        Ok(Box::new(ContainerWorkspace {
            dir,
            package: package.to_string(),
            name,
            runs: 0,
            sandbox: self.clone(),
        }))
    }
}

struct ContainerWorkspace {
    dir: tempfile::TempDir,
    package: String,
    name: String,
    runs: u32,
    sandbox: ContainerSandbox,
}

impl Workspace for ContainerWorkspace {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn run(&mut self, step: Step, timeout: Duration) -> Result<CommandOutput, EvalError> {
        let s = &self.sandbox;
        let work = self.dir.path();
        let line = s.templates.render(step, &self.package, work, s.use_buildcache);
        self.runs += 1;
        let container = format!("{}-{}", self.name, self.runs);
        let mount = format!("{}:{}", work.display(), work.display());
        let mut cmd = Command::new(&s.runtime);
        cmd.args(["run", "--rm", "--name", &container, "-v", &mount, "-w"]).arg(work);
        for (k, v) in package_env(work) {
            cmd.arg("-e").arg(format!("{k}={v}"));
        }
        if let Some(n) = &s.network {
            cmd.args(["--network", n]);
        }
        cmd.args(["--entrypoint", "sh", &s.image, "-c", &line]);
        let runtime = s.runtime.clone();
        run_with_timeout(cmd, work, timeout, move || {
            let _ = Command::new(runtime)
                .args(["kill", &container])
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status();
        })
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn templates(body: &str) -> CommandTemplates {
        CommandTemplates {
            load: body.into(),
            concretize: body.into(),
            install: body.into(),
            audit: body.into(),
            ..CommandTemplates::default()
        }
    }

    #[test]
    fn template_rendering() {
        let t = CommandTemplates::default();
        let line = t.render(Step::Stage(Stage::Install), "fxdiv", Path::new("/w"), false);
        assert_eq!(line, "spack -C '/w/config' install --fail-fast --no-cache recipesynth.fxdiv");
    }

    #[test]
    fn process_places_recipe_and_captures_output() {
        let root = tempfile::tempdir().unwrap();
        let sb = ProcessSandbox::new(root.path().to_path_buf(), templates("cat repo/packages/{package}/package.py; echo oops >&2; exit 3"));
        let mut ws = sb.prepare("demo", "class Demo(CMakePackage):\n    pass\n").unwrap();
        let out = ws.run(Step::Stage(Stage::Load), Duration::from_secs(10)).unwrap();
        assert_eq!(out.exit_code, 3);
        assert!(out.output.contains("class Demo"));
        assert!(out.output.contains("oops"));
        assert!(!out.timed_out);
        drop(ws);
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0, "work dir removed");
    }

    #[test]
    fn process_timeout_kills() {
        let root = tempfile::tempdir().unwrap();
        let sb = ProcessSandbox::new(root.path().to_path_buf(), templates("sleep 30"));
        let mut ws = sb.prepare("demo", "").unwrap();
        let start = Instant::now();
        let out = ws.run(Step::Stage(Stage::Install), Duration::from_millis(200)).unwrap();
        assert!(out.timed_out);
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn missing_runtime_is_sandbox_error() {
        let root = tempfile::tempdir().unwrap();
        let sb = ContainerSandbox {
            runtime: "/nonexistent/container-runtime".into(),
            image: "img".into(),
            network: None,
            work_root: root.path().to_path_buf(),
            templates: CommandTemplates::default(),
            use_buildcache: true,
        };
        let mut ws = sb.prepare("demo", "").unwrap();
        assert!(matches!(ws.run(Step::Stage(Stage::Load), Duration::from_secs(5)), Err(EvalError::Sandbox(_))));
    }
}

//! Drives an existing compiler's frontend, middle-end and backend as external
//! processes and builds runnable executables from any abstraction level.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{AbstractionLevel, Program};
use crate::process::{self, EnvPolicy};

/// A command line with `{input}`, `{output}` and `{flags}` placeholders.
/// `{flags}` must stand alone as an argument and expands to zero or more
/// arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandTemplate {
    pub fn new(program: &str, args: &[&str]) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn expand(&self, input: &Path, output: &Path, flags: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.args.len() + flags.len());
        for arg in &self.args {
            if arg == "{flags}" {
                out.extend(flags.iter().cloned());
            } else {
                out.push(
                    arg.replace("{input}", &input.to_string_lossy())
                        .replace("{output}", &output.to_string_lossy()),
                );
            }
        }
        out
    }

    /// Whether the program resolves to an executable file (directly or via PATH).
    pub fn resolves(&self) -> bool {
        resolve_executable(&self.program).is_some()
    }
}

pub fn resolve_executable(program: &str) -> Option<PathBuf> {
    let candidate = Path::new(program);
    if program.contains('/') {
        return is_executable(candidate).then(|| candidate.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|p| is_executable(p))
}

#[cfg(unix)]
pub fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    fs::metadata(path)
        .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

#[cfg(not(unix))]
pub fn is_executable(path: &Path) -> bool {
    path.is_file()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_diag_limit() -> usize {
    8 * 1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    pub frontend_command: CommandTemplate,
    pub middleend_command: CommandTemplate,
    pub backend_command: CommandTemplate,
    pub link_command: CommandTemplate,
    pub baseline_command: CommandTemplate,
    pub baseline_opt_flags: Vec<String>,
    pub work_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub per_invocation_timeout: f64,
    #[serde(default = "default_diag_limit")]
    pub diagnostic_limit: usize,
    /// Re-run the middle-end when building from IR. Off by default so that
    /// IR-level rewrites are measured as written.
    #[serde(default)]
    pub ir_build_runs_middle_end: bool,
    #[serde(default)]
    pub env_allowlist: Option<Vec<String>>,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        Self::clang("clang", std::env::temp_dir().join("stratopt-work"))
    }
}

impl ToolchainConfig {
    /// Templates for a clang driver, which accepts C, textual IR and assembly.
    pub fn clang(clang: &str, work_dir: PathBuf) -> Self {
        Self {
            frontend_command: CommandTemplate::new(
                clang,
                &[
                    "-S", "-emit-llvm", "-O3", "-Xclang", "-disable-llvm-passes", "{flags}", "-x",
                    "c", "{input}", "-o", "{output}",
                ],
            ),
            middleend_command: CommandTemplate::new(
                clang,
                &["-S", "-emit-llvm", "{flags}", "-x", "ir", "{input}", "-o", "{output}"],
            ),
            backend_command: CommandTemplate::new(
                clang,
                &["-S", "{flags}", "-x", "ir", "{input}", "-o", "{output}"],
            ),
            link_command: CommandTemplate::new(
                clang,
                &["{flags}", "-x", "assembler", "{input}", "-o", "{output}", "-lm"],
            ),
            baseline_command: CommandTemplate::new(
                clang,
                &["{flags}", "-x", "c", "{input}", "-o", "{output}", "-lm"],
            ),
            baseline_opt_flags: vec!["-O3".into()],
            work_dir,
            per_invocation_timeout: default_timeout(),
            diagnostic_limit: default_diag_limit(),
            ir_build_runs_middle_end: false,
            env_allowlist: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.per_invocation_timeout > 0.0) {
            return Err("per_invocation_timeout must be positive".into());
        }
        for (name, cmd) in [
            ("frontend", &self.frontend_command),
            ("middle_end", &self.middleend_command),
            ("backend", &self.backend_command),
            ("link", &self.link_command),
            ("baseline", &self.baseline_command),
        ] {
            if !cmd.resolves() {
                return Err(format!("{name} command {:?} is not executable", cmd.program));
            }
        }
        Ok(())
    }
}

/// Compiler output captured as feedback text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub exit_code: i32,
    pub message: String,
    #[serde(default)]
    pub timed_out: bool,
}

impl Diagnostic {
    pub fn new(stage: impl Into<String>, exit_code: i32, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            exit_code,
            message: message.into(),
            timed_out: false,
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.timed_out {
            write!(f, "{}: timed out\n{}", self.stage, self.message)
        } else {
            write!(f, "{} (exit {}):\n{}", self.stage, self.exit_code, self.message)
        }
    }
}

/// Lossy-decodes `bytes` and cuts it at `limit` bytes on a char boundary,
/// marking the cut.
pub fn truncate_text(bytes: &[u8], limit: usize) -> String {
    let text = String::from_utf8_lossy(bytes);
    if text.len() <= limit {
        return text.into_owned();
    }
    let mut cut = limit;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!(
        "{}\n[... truncated {} bytes]",
        &text[..cut],
        text.len() - cut
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Executable {
    pub path: PathBuf,
    pub built_from_level: AbstractionLevel,
    pub build_id: String,
}

/// The compiler components the guiding agent can call as tools.
pub trait Compiler: Send + Sync {
    /// Runs the component named `tool_id` on `program`. `passes` only applies
    /// to rewrite components (the middle-end).
    fn run_component(
        &self,
        tool_id: &str,
        program: &Program,
        passes: Option<&str>,
    ) -> Result<Program, Diagnostic>;
}

/// Scratch directory of one build, unique within the work dir.
struct BuildDir {
    id: String,
    path: PathBuf,
}

pub struct Toolchain {
    cfg: ToolchainConfig,
    source: AbstractionLevel,
    ir: AbstractionLevel,
    assembly: AbstractionLevel,
    counter: AtomicU64,
    env: EnvPolicy,
}

impl Toolchain {
    pub fn new(mut cfg: ToolchainConfig) -> Self {
        // builds run with the build dir as cwd, so relative paths would break
        if let Ok(abs) = std::path::absolute(&cfg.work_dir) {
            cfg.work_dir = abs;
        }
        let env = EnvPolicy {
            allowlist: cfg.env_allowlist.clone(),
        };
        Self {
            cfg,
            source: AbstractionLevel::source(),
            ir: AbstractionLevel::ir(),
            assembly: AbstractionLevel::assembly(),
            counter: AtomicU64::new(0),
            env,
        }
    }

    pub fn config(&self) -> &ToolchainConfig {
        &self.cfg
    }

    pub fn levels(&self) -> [&AbstractionLevel; 3] {
        [&self.source, &self.ir, &self.assembly]
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.cfg.per_invocation_timeout)
    }

    fn new_build_dir(&self, stage: &str) -> Result<BuildDir, Diagnostic> {
        let root = self.cfg.work_dir.join("builds");
        fs::create_dir_all(&root).map_err(|e| io_diag(stage, e))?;
        loop {
            let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
            let id = format!("b{n:06}-{stage}");
            let path = root.join(&id);
            // create_dir fails on an existing directory, so concurrent or
            // earlier builds never share scratch space.
            match fs::create_dir(&path) {
                Ok(()) => return Ok(BuildDir { id, path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_diag(stage, e)),
            }
        }
    }

    fn invoke(
        &self,
        stage: &str,
        template: &CommandTemplate,
        input: &Path,
        output: &Path,
        flags: &[String],
        cwd: &Path,
    ) -> Result<(), Diagnostic> {
        let args = template.expand(input, output, flags);
        let run = process::run(&template.program, &args, None, Some(cwd), self.timeout(), &self.env)
            .map_err(|e| io_diag(stage, e))?;
        if run.success() {
            return Ok(());
        }
        let mut captured = run.stderr.clone();
        if captured.is_empty() {
            captured = run.stdout.clone();
        }
        let mut message = truncate_text(&captured, self.cfg.diagnostic_limit);
        if message.trim().is_empty() {
            message = format!("{} exited without output", template.program);
        }
        Err(Diagnostic {
            stage: stage.into(),
            exit_code: run.exit_code(),
            message,
            timed_out: run.timed_out,
        })
    }

    fn expect_level(&self, stage: &str, p: &Program, level: &AbstractionLevel) -> Result<(), Diagnostic> {
        if p.level.ordinal != level.ordinal {
            return Err(Diagnostic::new(
                stage,
                -1,
                format!("{stage} expects a {level} program, got {}", p.level),
            ));
        }
        Ok(())
    }

    fn transform(
        &self,
        stage: &str,
        template: &CommandTemplate,
        p: &Program,
        in_name: &str,
        out_name: &str,
        flags: &[String],
        out_level: &AbstractionLevel,
    ) -> Result<Program, Diagnostic> {
        let dir = self.new_build_dir(stage)?;
        let input = dir.path.join(in_name);
        let output = dir.path.join(out_name);
        fs::write(&input, p.text()).map_err(|e| io_diag(stage, e))?;
        self.invoke(stage, template, &input, &output, flags, &dir.path)?;
        let bytes = fs::read(&output).map_err(|e| io_diag(stage, e))?;
        let text = String::from_utf8_lossy(&bytes).into_owned();
        Program::new(out_level.clone(), text)
            .map(|p| p.with_provenance(stage))
            .map_err(|e| Diagnostic::new(stage, -1, format!("{stage} produced no output: {e}")))
    }

    pub fn frontend(&self, p: &Program) -> Result<Program, Diagnostic> {
        self.expect_level("frontend", p, &self.source)?;
        self.transform(
            "frontend",
            &self.cfg.frontend_command,
            p,
            "input.c",
            "output.ll",
            &[],
            &self.ir,
        )
    }

    /// `passes`: `None` runs the baseline optimization level; an empty string
    /// runs no optimization; anything else is split into driver flags.
    pub fn middle_end(&self, p: &Program, passes: Option<&str>) -> Result<Program, Diagnostic> {
        self.expect_level("middle_end", p, &self.ir)?;
        let flags: Vec<String> = match passes {
            None => self.cfg.baseline_opt_flags.clone(),
            Some(spec) if spec.trim().is_empty() => vec!["-O0".into()],
            Some(spec) => spec.split_whitespace().map(String::from).collect(),
        };
        self.transform(
            "middle_end",
            &self.cfg.middleend_command,
            p,
            "input.ll",
            "output.ll",
            &flags,
            &self.ir,
        )
    }

    pub fn backend(&self, p: &Program) -> Result<Program, Diagnostic> {
        self.expect_level("backend", p, &self.ir)?;
        self.transform(
            "backend",
            &self.cfg.backend_command,
            p,
            "input.ll",
            "output.s",
            &self.cfg.baseline_opt_flags,
            &self.assembly,
        )
    }

    pub fn link(&self, p: &Program) -> Result<Executable, Diagnostic> {
        self.expect_level("link", p, &self.assembly)?;
        let dir = self.new_build_dir("link")?;
        let input = dir.path.join("input.s");
        let output = dir.path.join("program");
        fs::write(&input, p.text()).map_err(|e| io_diag("link", e))?;
        self.invoke("link", &self.cfg.link_command, &input, &output, &[], &dir.path)?;
        checked_executable("link", output, p.level.clone(), dir.id)
    }

    pub fn build_executable(&self, p: &Program) -> Result<Executable, Diagnostic> {
        let asm = match p.level.ordinal {
            1 => {
                let ir = self.frontend(p)?;
                let ir = self.middle_end(&ir, None)?;
                self.backend(&ir)?
            }
            2 => {
                let ir = if self.cfg.ir_build_runs_middle_end {
                    self.middle_end(p, None)?
                } else {
                    p.clone()
                };
                self.backend(&ir)?
            }
            3 => p.clone(),
            _ => {
                return Err(Diagnostic::new(
                    "build",
                    -1,
                    format!("no build route for level {}", p.level),
                ))
            }
        };
        let mut exe = self.link(&asm)?;
        exe.built_from_level = p.level.clone();
        Ok(exe)
    }

    /// The reference build of the original source at the baseline optimization level.
    pub fn baseline_executable(&self, p: &Program) -> Result<Executable, Diagnostic> {
        self.expect_level("baseline", p, &self.source)?;
        let dir = self.new_build_dir("baseline")?;
        let input = dir.path.join("input.c");
        let output = dir.path.join("program");
        fs::write(&input, p.text()).map_err(|e| io_diag("baseline", e))?;
        self.invoke(
            "baseline",
            &self.cfg.baseline_command,
            &input,
            &output,
            &self.cfg.baseline_opt_flags,
            &dir.path,
        )?;
        checked_executable("baseline", output, p.level.clone(), dir.id)
    }
}

impl Compiler for Toolchain {
    fn run_component(
        &self,
        tool_id: &str,
        program: &Program,
        passes: Option<&str>,
    ) -> Result<Program, Diagnostic> {
        match tool_id {
            "frontend" => self.frontend(program),
            "middle_end" => self.middle_end(program, passes),
            "backend" => self.backend(program),
            other => Err(Diagnostic::new(other, -1, format!("unknown compiler component {other}"))),
        }
    }
}

fn checked_executable(
    stage: &str,
    path: PathBuf,
    level: AbstractionLevel,
    build_id: String,
) -> Result<Executable, Diagnostic> {
    if !is_executable(&path) {
        return Err(Diagnostic::new(
            stage,
            -1,
            format!("{} is not an executable file", path.display()),
        ));
    }
    Ok(Executable {
        path,
        built_from_level: level,
        build_id,
    })
}

fn io_diag(stage: &str, e: std::io::Error) -> Diagnostic {
    Diagnostic::new(stage, -1, format!("I/O error: {e}"))
}

/// True when the default clang driver is installed.
pub fn clang_available() -> bool {
    resolve_executable("clang").is_some()
}

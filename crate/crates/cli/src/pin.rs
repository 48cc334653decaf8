//! CPU pinning for timing runs. A no-op outside Linux or when the affinity
//! calls are refused.

/// Pins the current thread to the CPU it is running on and restores the
/// previous affinity mask on drop.
pub struct PinGuard {
    #[cfg(target_os = "linux")]
    previous: Option<libc::cpu_set_t>,
}

#[cfg(target_os = "linux")]
impl PinGuard {
    pub fn current_cpu() -> Self {
        // SAFETY: the cpu_set_t values are plain bitmasks owned by this frame,
        // and pid 0 addresses the calling thread.
        unsafe {
            let mut previous: libc::cpu_set_t = std::mem::zeroed();
            let size = std::mem::size_of::<libc::cpu_set_t>();
            if libc::sched_getaffinity(0, size, &mut previous) != 0 {
                return Self { previous: None };
            }
            let cpu = libc::sched_getcpu();
            if cpu < 0 {
                return Self { previous: None };
            }
            let mut one: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_SET(cpu as usize, &mut one);
            if libc::sched_setaffinity(0, size, &one) != 0 {
                return Self { previous: None };
            }
            Self { previous: Some(previous) }
        }
    }

    pub fn is_pinned(&self) -> bool {
        self.previous.is_some()
    }
}

#[cfg(target_os = "linux")]
impl Drop for PinGuard {
    fn drop(&mut self) {
        if let Some(mask) = &self.previous {
            // SAFETY: restores a mask previously returned by sched_getaffinity.
            unsafe {
                libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), mask);
            }
        }
    }
}

#[cfg(not(target_os = "linux"))]
impl PinGuard {
    pub fn current_cpu() -> Self {
        Self {}
    }

    pub fn is_pinned(&self) -> bool {
        false
    }
}

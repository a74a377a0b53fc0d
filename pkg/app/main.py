from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse
import time
import logging
from app.config.settings import settings
from app.routers import value_router

# Configure logging
logging.basicConfig(level=settings.log_level.upper())
logger = logging.getLogger(__name__)

# Create FastAPI application
app = FastAPI(
    title=settings.app_name,
    description="Serves value functions learned from action-free videos, value maps and experiment reports",
    version=settings.app_version,
    debug=settings.debug
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Add request timing middleware
@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(process_time)
    return response

# Include routers
app.include_router(value_router.router, prefix=settings.api_v1_prefix)

# Root endpoint
@app.get("/", response_class=HTMLResponse)
async def root():
    """Root endpoint with API documentation links"""
    return f"""
    <html>
        <head>
            <title>{settings.app_name}</title>
            <style>
                body {{ font-family: Arial, sans-serif; margin: 40px; }}
                .endpoint {{ margin: 10px 0; }}
                .description {{ color: #7f8c8d; margin-left: 20px; }}
            </style>
        </head>
        <body>
            <h1>🧭 {settings.app_name}</h1>
            <p>Learned object-goal values over artifacts in <code>{settings.work_dir}</code>.</p>

            <h2>📚 API Documentation</h2>
            <div class="endpoint"><a href="/docs">📋 Swagger UI</a></div>
            <div class="endpoint"><a href="/redoc">📖 ReDoc</a></div>

            <h2>🔗 API Endpoints</h2>
            <div class="endpoint">
                <a href="{settings.api_v1_prefix}/value/health">GET {settings.api_v1_prefix}/value/health</a>
                <div class="description">Artifact availability</div>
            </div>
            <div class="endpoint">
                POST {settings.api_v1_prefix}/value/predict
                <div class="description">Per-category values of one observation</div>
            </div>
            <div class="endpoint">
                GET {settings.api_v1_prefix}/value/map?world=worlds/test_000.txt&amp;category=dining_table
                <div class="description">Top-down value map as plain PGM</div>
            </div>
            <div class="endpoint">
                <a href="{settings.api_v1_prefix}/value/reports/eval">GET {settings.api_v1_prefix}/value/reports/{{name}}</a>
                <div class="description">Parsed experiment report</div>
            </div>
        </body>
    </html>
    """

# Health check endpoint
@app.get("/health")
async def health_check():
    """General health check endpoint"""
    return {
        "status": "healthy",
        "message": f"{settings.app_name} is running",
        "version": settings.app_version,
        "debug": settings.debug
    }

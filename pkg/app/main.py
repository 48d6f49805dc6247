from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import os
from dotenv import load_dotenv

# ----------------------------------------------------
# LOAD .ENV
# ----------------------------------------------------
load_dotenv(override=False)

from app.config import settings
from app.db import engine
from app.logging_config import configure_logging
from models import Base

# Routers
from routers import runs

configure_logging(settings.log_level)

# ----------------------------------------------------
# FASTAPI APP
# ----------------------------------------------------
app = FastAPI(
    title="dpkmeans analyst service",
    version="1.0.0",
)

# ----------------------------------------------------
# CORS CONFIG
# ----------------------------------------------------
cors_env = os.getenv("CORS_ORIGINS", "http://localhost:5173,http://127.0.0.1:5173")
origins = [o.strip() for o in cors_env.split(",") if o.strip()]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ----------------------------------------------------
# DB INIT (dev only; migrations otherwise)
# ----------------------------------------------------
if os.getenv("ENV", "dev") == "dev" and os.getenv("DB_AUTO_CREATE") == "1":
    Base.metadata.create_all(bind=engine)

# ----------------------------------------------------
# ROUTERS
# ----------------------------------------------------
app.include_router(runs.router)


# ----------------------------------------------------
# BASE
# ----------------------------------------------------
@app.get("/")
def root():
    return {"message": "dpkmeans analyst service is up"}


@app.get("/health")
def health():
    return {"ok": True}
